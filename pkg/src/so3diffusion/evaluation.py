"""Distribution comparison and orientation-correlation diagnostics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nets
from .errors import InsufficientSamples, ShapeMismatch
from .validation import as_generator, check_rotations

C2ST_MIN_SAMPLES = 500
_C2ST_WIDTHS = [9, 64, 64, 1]
_C2ST_LR = 1e-3
_C2ST_EPOCHS = 30
_C2ST_BATCH = 128


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _train_classifier(
    X: np.ndarray, y: np.ndarray, rng: np.random.Generator
) -> nets.MLPParams:
    params = nets.mlp_init(_C2ST_WIDTHS, rng)
    state = nets.adam_init(params, lr=_C2ST_LR)
    n = X.shape[0]
    for _ in range(_C2ST_EPOCHS):
        order = rng.permutation(n)
        for start in range(0, n, _C2ST_BATCH):
            idx = order[start : start + _C2ST_BATCH]
            xb, yb = X[idx], y[idx]
            z = nets.mlp_forward(params, xb)[:, 0]
            p = _sigmoid(z)
            upstream = ((p - yb) / idx.size)[:, None]
            grads, _ = nets.mlp_backward(params, xb, upstream)
            params, state = nets.adam_step(params, grads, state)
    return params


def c2st(
    a: np.ndarray,
    b: np.ndarray,
    k_folds: int = 5,
    random_state=None,
) -> tuple[float, float]:
    """Classifier two-sample test score between two rotation sets.

    Features are the 9 flattened matrix entries; the classifier is a fixed
    [9, 64, 64, 1] leaky-ReLU net with logistic loss. The score is the mean
    held-out accuracy over k folds (0.5 means indistinguishable) and the
    second value is the population standard deviation across folds.

    Raises:
        InsufficientSamples: if either side has fewer than 500 samples.
    """
    a = check_rotations(a)
    b = check_rotations(b)
    if len(a) < C2ST_MIN_SAMPLES or len(b) < C2ST_MIN_SAMPLES:
        raise InsufficientSamples(
            f"need at least {C2ST_MIN_SAMPLES} samples per side, "
            f"got {len(a)} and {len(b)}"
        )
    if k_folds < 2:
        raise ValueError("k_folds must be at least 2")
    rng = as_generator(random_state)
    X = np.concatenate([a.reshape(len(a), 9), b.reshape(len(b), 9)])
    y = np.concatenate([np.zeros(len(a)), np.ones(len(b))])
    perm = rng.permutation(len(y))
    folds = np.array_split(perm, k_folds)
    accs = []
    for held in folds:
        mask = np.ones(len(y), dtype=bool)
        mask[held] = False
        params = _train_classifier(X[mask], y[mask], rng)
        z = nets.mlp_forward(params, X[held])[:, 0]
        accs.append(float(np.mean((z > 0.0) == (y[held] == 1.0))))
    accs = np.asarray(accs)
    return float(accs.mean()), float(accs.std())


@dataclass
class OrientedPointCloud:
    """Positions in R^3 with a unit orientation axis per point."""

    positions: np.ndarray
    axes: np.ndarray

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float)
        self.axes = np.asarray(self.axes, dtype=float)
        if self.positions.ndim != 2 or self.positions.shape[1] != 3:
            raise ShapeMismatch("positions must have shape (n, 3)")
        if self.axes.shape != self.positions.shape:
            raise ShapeMismatch("axes must match positions in shape")
        norms = np.linalg.norm(self.axes, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-6):
            raise ValueError("axes must be unit vectors within 1e-6")

    def __len__(self) -> int:
        return self.positions.shape[0]


def _octant_blocks(positions: np.ndarray) -> np.ndarray:
    center = positions.mean(axis=0)
    rel = positions > center
    return rel[:, 0] * 4 + rel[:, 1] * 2 + rel[:, 2] * 1


def _slice_blocks(positions: np.ndarray, n_blocks: int) -> np.ndarray:
    order = np.argsort(positions[:, 2], kind="stable")
    blocks = np.empty(len(positions), dtype=int)
    for b, chunk in enumerate(np.array_split(order, n_blocks)):
        blocks[chunk] = b
    return blocks


def ed_correlation(
    cloud: OrientedPointCloud,
    r_bins,
    n_jackknife: int = 8,
) -> tuple[np.ndarray, np.ndarray]:
    """Orientation-direction correlation versus pair separation.

    For every ordered pair (i, j) with separation inside a bin the statistic
    averages |e_i . rhat_ij|^2 and subtracts the isotropic value 1/3, so the
    result lies in [-1/3, 2/3]. Errors are delete-one-block jackknife over
    spatial blocks: octants about the centroid when n_jackknife is 8
    (default), contiguous equal-count z-slices otherwise. Bins with no pairs
    are reported as NaN.

    Args:
        cloud: oriented point cloud.
        r_bins: sequence of (r_lo, r_hi) separation intervals.
        n_jackknife: number of spatial blocks.

    Returns:
        (omega, err) arrays of length len(r_bins).
    """
    edges = np.asarray([(float(lo), float(hi)) for lo, hi in r_bins])
    if np.any(edges[:, 0] >= edges[:, 1]) or np.any(edges < 0.0):
        raise ValueError("each bin must satisfy 0 <= r_lo < r_hi")
    if n_jackknife < 2:
        raise ValueError("n_jackknife must be at least 2")
    pos, ax = cloud.positions, cloud.axes
    n = len(cloud)
    blocks = (
        _octant_blocks(pos) if n_jackknife == 8 else _slice_blocks(pos, n_jackknife)
    )
    nb = n_jackknife
    m = len(edges)
    sums = np.zeros((nb, nb, m))
    counts = np.zeros((nb, nb, m))

    chunk = max(1, int(2e6) // max(n, 1))
    for start in range(0, n, chunk):
        stop = min(start + chunk, n)
        diff = pos[None, :, :] - pos[start:stop, None, :]  # j minus i
        dist = np.linalg.norm(diff, axis=-1)
        valid = dist > 1e-12
        with np.errstate(invalid="ignore", divide="ignore"):
            proj = np.einsum("ik,ijk->ij", ax[start:stop], diff) / dist
        val = proj * proj
        bi = blocks[start:stop]
        for k, (lo, hi) in enumerate(edges):
            sel = valid & (dist >= lo) & (dist < hi)
            if not sel.any():
                continue
            ii, jj = np.nonzero(sel)
            np.add.at(sums[:, :, k], (bi[ii], blocks[jj]), val[ii, jj])
            np.add.at(counts[:, :, k], (bi[ii], blocks[jj]), 1.0)

    tot_s = sums.sum(axis=(0, 1))
    tot_c = counts.sum(axis=(0, 1))
    with np.errstate(invalid="ignore", divide="ignore"):
        omega = np.where(tot_c > 0, tot_s / np.where(tot_c > 0, tot_c, 1.0) - 1.0 / 3.0, np.nan)

    err = np.full(m, np.nan)
    for k in range(m):
        if tot_c[k] == 0:
            continue
        est = []
        ok = True
        for b in range(nb):
            s_b = tot_s[k] - sums[b, :, k].sum() - sums[:, b, k].sum() + sums[b, b, k]
            c_b = (
                tot_c[k] - counts[b, :, k].sum() - counts[:, b, k].sum() + counts[b, b, k]
            )
            if c_b <= 0:
                ok = False
                break
            est.append(s_b / c_b - 1.0 / 3.0)
        if ok:
            est = np.asarray(est)
            err[k] = np.sqrt((nb - 1.0) / nb * np.sum((est - est.mean()) ** 2))
    return omega, err
