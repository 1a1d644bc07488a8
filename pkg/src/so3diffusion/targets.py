"""Benchmark target distributions on SO(3).

All samplers take an explicit numpy Generator and return (n, 3, 3) rotation
arrays (plus aligned context vectors for the conditional target). The
canonical-coordinate system used by the checkerboard and the stripes is the
fibration of SO(3) over the sphere: for a rotation R the canonical axis is
a = R zhat with azimuth/cos-polar coordinates, and the tilt is the residual
rotation about that axis after undoing the geodesic reference rotation
taking zhat to a. Haar measure is the uniform product measure in
(azimuth, cos-polar, tilt), which makes parity-cell acceptance exactly 1/2.
"""

from __future__ import annotations

import numpy as np

from . import igso3, so3
from .errors import UnknownTarget
from .sampleset import SampleSet

FOUR_GAUSSIANS_EPS0 = 0.05
STRIPE_CENTERS = (-0.6, 0.0, 0.6)
STRIPE_HALF_WIDTH = 0.1
CHECKER_DIVISIONS = (8, 4, 4)
TWO_BLOB_SEPARATION = 2.4
_POLE_TOL = 1.0 - 1e-12

_EZ = np.array([0.0, 0.0, 1.0])


def four_gaussian_means() -> np.ndarray:
    """Means whose canonical axes point along +z, -z, +x, -x."""
    return np.stack(
        [
            np.eye(3),
            so3.expm(np.array([np.pi, 0.0, 0.0])),
            so3.expm(np.array([0.0, np.pi / 2.0, 0.0])),
            so3.expm(np.array([0.0, -np.pi / 2.0, 0.0])),
        ]
    )


def two_blob_means() -> np.ndarray:
    """Means of the context-switched two-blob target."""
    return np.stack(
        [np.eye(3), so3.expm(np.array([0.0, 0.0, TWO_BLOB_SEPARATION]))]
    )


def canonical_coords(R: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Azimuth, cos-polar, and tilt coordinates of rotations.

    Returns:
        (azimuth in (-pi, pi], cos_polar in [-1, 1], tilt in (-pi, pi]).
    """
    R = np.asarray(R, dtype=float)
    single = R.ndim == 2
    if single:
        R = R[None]
    a = R @ _EZ
    az = np.arctan2(a[:, 1], a[:, 0])
    cp = np.clip(a[:, 2], -1.0, 1.0)

    # Geodesic reference rotation taking zhat to a; poles special-cased.
    k = np.cross(np.broadcast_to(_EZ, a.shape), a)
    kn = np.linalg.norm(k, axis=-1)
    beta = np.arccos(cp)
    generic = kn > 1e-12
    axis = np.where(generic[:, None], k / np.where(generic, kn, 1.0)[:, None], [1.0, 0.0, 0.0])
    ref = so3.expm(beta[:, None] * axis)
    ref[cp >= _POLE_TOL] = np.eye(3)
    ref[cp <= -_POLE_TOL] = np.diag([1.0, -1.0, -1.0])
    S = so3.inverse(ref) @ R
    tilt = np.arctan2(S[:, 1, 0], S[:, 0, 0])
    if single:
        return float(az[0]), float(cp[0]), float(tilt[0])
    return az, cp, tilt


def _euler_zyz(alpha, beta, gamma) -> np.ndarray:
    za = so3.expm(np.asarray(alpha)[:, None] * _EZ)
    yb = so3.expm(np.stack([np.zeros_like(beta), beta, np.zeros_like(beta)], axis=-1))
    zg = so3.expm(np.asarray(gamma)[:, None] * _EZ)
    return za @ yb @ zg


def sample_uniform(n: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-uniform rotations."""
    return so3.sample_uniform(rng, size=n)


def sample_four_gaussians(
    n: int, rng: np.random.Generator, eps0: float = FOUR_GAUSSIANS_EPS0
) -> np.ndarray:
    """Equal-weight mixture of four IG(mu_k, eps0) blobs at the canonical axes."""
    means = four_gaussian_means()
    comp = rng.integers(0, 4, size=n)
    angles, axes = igso3.sample_tangent_batch(np.full(n, float(eps0)), rng)
    return means[comp] @ so3.expm(angles[:, None] * axes)


def checker_cell_parity(R: np.ndarray) -> np.ndarray:
    """Parity (0 even, 1 odd) of the 8x4x4 canonical-coordinate cell."""
    az, cp, tilt = canonical_coords(np.asarray(R, dtype=float).reshape(-1, 3, 3))
    na, nc, nt = CHECKER_DIVISIONS
    i = np.clip(((az + np.pi) / (2.0 * np.pi) * na).astype(int), 0, na - 1)
    j = np.clip(((cp + 1.0) / 2.0 * nc).astype(int), 0, nc - 1)
    k = np.clip(((tilt + np.pi) / (2.0 * np.pi) * nt).astype(int), 0, nt - 1)
    return (i + j + k) % 2


def sample_checkerboard(n: int, rng: np.random.Generator) -> np.ndarray:
    """Haar restricted to even-parity cells, by rejection (acceptance 1/2)."""
    out = np.empty((n, 3, 3))
    filled = 0
    while filled < n:
        batch = so3.sample_uniform(rng, size=max(2 * (n - filled), 64))
        keep = batch[checker_cell_parity(batch) == 0]
        take = min(len(keep), n - filled)
        out[filled : filled + take] = keep[:take]
        filled += take
    return out


def sample_three_stripes(n: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform mixture of three polar bands, uniform in azimuth and tilt."""
    band = rng.integers(0, 3, size=n)
    centers = np.asarray(STRIPE_CENTERS)[band]
    cp = centers + rng.uniform(-STRIPE_HALF_WIDTH, STRIPE_HALF_WIDTH, size=n)
    az = rng.uniform(-np.pi, np.pi, size=n)
    tilt = rng.uniform(-np.pi, np.pi, size=n)
    beta = np.arccos(np.clip(cp, -1.0, 1.0))
    return _euler_zyz(az, beta, tilt - az)


def sample_two_blobs_conditional(n: int, rng: np.random.Generator) -> SampleSet:
    """Context bit 0/1 selects one of two well-separated IG blobs."""
    means = two_blob_means()
    bit = rng.integers(0, 2, size=n)
    angles, axes = igso3.sample_tangent_batch(
        np.full(n, FOUR_GAUSSIANS_EPS0), rng
    )
    rots = means[bit] @ so3.expm(angles[:, None] * axes)
    return SampleSet(rotations=rots, contexts=bit[:, None].astype(float))


_REGISTRY = {
    "uniform": sample_uniform,
    "four-gaussians": sample_four_gaussians,
    "checkerboard": sample_checkerboard,
    "three-stripes": sample_three_stripes,
    "two-blobs-cond": sample_two_blobs_conditional,
}


def target_names() -> list[str]:
    return sorted(_REGISTRY)


def sample_target(name: str, n: int, rng: np.random.Generator) -> SampleSet:
    """Draw n samples from a registered target by name.

    Raises:
        UnknownTarget: listing the valid names.
    """
    fn = _REGISTRY.get(name)
    if fn is None:
        raise UnknownTarget(
            f"unknown target {name!r}; valid names: {', '.join(target_names())}"
        )
    out = fn(n, rng)
    if isinstance(out, SampleSet):
        out.label = name
        return out
    return SampleSet(rotations=out, label=name)
