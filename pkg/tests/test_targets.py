"""Benchmark target distributions and canonical coordinates."""

from __future__ import annotations

import numpy as np
import pytest
from scipy import stats

from so3diffusion import so3, targets
from so3diffusion.errors import UnknownTarget

_EZ = np.array([0.0, 0.0, 1.0])
_EY = np.array([0.0, 1.0, 0.0])


def _from_coords(az, cp, tilt):
    beta = np.arccos(np.clip(cp, -1.0, 1.0))
    za = so3.expm(az[:, None] * _EZ)
    yb = so3.expm(beta[:, None] * _EY)
    zg = so3.expm((tilt - az)[:, None] * _EZ)
    return za @ yb @ zg


def test_registry_names():
    assert targets.target_names() == [
        "checkerboard",
        "four-gaussians",
        "three-stripes",
        "two-blobs-cond",
        "uniform",
    ]


def test_sample_target_labels_and_unknown():
    rng = np.random.default_rng(0)
    s = targets.sample_target("uniform", 12, rng)
    assert s.label == "uniform" and len(s) == 12 and s.contexts is None
    with pytest.raises(UnknownTarget):
        targets.sample_target("nope", 5, rng)


def test_canonical_coords_roundtrip():
    rng = np.random.default_rng(1)
    az = rng.uniform(-np.pi + 1e-3, np.pi - 1e-3, 300)
    cp = rng.uniform(-0.99, 0.99, 300)
    tilt = rng.uniform(-np.pi + 1e-3, np.pi - 1e-3, 300)
    R = _from_coords(az, cp, tilt)
    az2, cp2, tilt2 = targets.canonical_coords(R)
    assert np.abs(az2 - az).max() < 1e-9
    assert np.abs(cp2 - cp).max() < 1e-9
    dt = np.angle(np.exp(1j * (tilt2 - tilt)))
    assert np.abs(dt).max() < 1e-9


def test_canonical_coords_pole_and_single():
    theta = 0.8
    az, cp, tilt = targets.canonical_coords(so3.expm(theta * _EZ))
    assert isinstance(cp, float)
    assert abs(cp - 1.0) < 1e-12
    assert abs(tilt - theta) < 1e-12


def test_four_gaussians_concentrates_at_means():
    rng = np.random.default_rng(2)
    s = targets.sample_target("four-gaussians", 4000, rng)
    means = targets.four_gaussian_means()
    d = np.stack(
        [so3.geodesic_angle(s.rotations, np.broadcast_to(m, s.rotations.shape)) for m in means]
    )
    nearest = d.min(axis=0)
    # scale eps0 = 0.05 -> typical angle ~ sqrt(2 eps0) ~ 0.32
    assert np.quantile(nearest, 0.99) < 1.2
    counts = np.bincount(d.argmin(axis=0), minlength=4)
    assert counts.min() > 800


def test_checkerboard_parity_and_acceptance():
    rng = np.random.default_rng(3)
    s = targets.sample_target("checkerboard", 3000, rng)
    assert np.all(targets.checker_cell_parity(s.rotations) == 0)
    # Haar mass of even cells is exactly 1/2
    u = so3.sample_uniform(rng, size=20_000)
    frac = np.mean(targets.checker_cell_parity(u) == 0)
    assert abs(frac - 0.5) < 0.02


def test_three_stripes_band_structure():
    rng = np.random.default_rng(4)
    s = targets.sample_target("three-stripes", 6000, rng)
    az, cp, tilt = targets.canonical_coords(s.rotations)
    centers = np.asarray(targets.STRIPE_CENTERS)
    dist = np.abs(cp[:, None] - centers[None, :]).min(axis=1)
    assert dist.max() <= targets.STRIPE_HALF_WIDTH + 1e-9
    # azimuth and tilt stay uniform
    assert stats.kstest(az, stats.uniform(-np.pi, 2 * np.pi).cdf).pvalue > 1e-3
    assert stats.kstest(tilt, stats.uniform(-np.pi, 2 * np.pi).cdf).pvalue > 1e-3


def test_two_blobs_conditional():
    rng = np.random.default_rng(5)
    s = targets.sample_target("two-blobs-cond", 4000, rng)
    assert s.contexts is not None and s.contexts.shape == (4000, 1)
    bits = s.contexts[:, 0]
    assert set(np.unique(bits)) == {0.0, 1.0}
    means = targets.two_blob_means()
    for b in (0, 1):
        sel = s.rotations[bits == b]
        d = so3.geodesic_angle(sel, np.broadcast_to(means[b], sel.shape))
        assert np.quantile(d, 0.99) < 1.2
        # the other mean is far away
        d_other = so3.geodesic_angle(sel, np.broadcast_to(means[1 - b], sel.shape))
        assert np.median(d_other) > 1.5


def test_sampling_is_deterministic_by_seed():
    for name in targets.target_names():
        a = targets.sample_target(name, 64, np.random.default_rng(11))
        b = targets.sample_target(name, 64, np.random.default_rng(11))
        assert np.array_equal(a.rotations, b.rotations)


def test_all_targets_emit_valid_rotations():
    rng = np.random.default_rng(6)
    for name in targets.target_names():
        R = targets.sample_target(name, 200, rng).rotations
        assert np.abs(R @ np.swapaxes(R, -1, -2) - np.eye(3)).max() < 1e-9
        assert np.abs(np.linalg.det(R) - 1.0).max() < 1e-9
