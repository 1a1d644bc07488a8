"""Classifier two-sample test and orientation-direction correlation."""

from __future__ import annotations

import numpy as np
import pytest

from so3diffusion import evaluation, so3, targets
from so3diffusion.errors import InsufficientSamples, ShapeMismatch


def test_c2st_near_half_on_identical_law():
    rng = np.random.default_rng(0)
    a = so3.sample_uniform(rng, size=700)
    b = so3.sample_uniform(rng, size=700)
    acc, std = evaluation.c2st(a, b, k_folds=3, random_state=1)
    assert 0.40 <= acc <= 0.60, (acc, std)
    assert std >= 0.0


def test_c2st_high_on_separated_laws():
    rng = np.random.default_rng(1)
    a = targets.sample_target("four-gaussians", 700, rng).rotations
    b = so3.sample_uniform(rng, size=700)
    acc, _ = evaluation.c2st(a, b, k_folds=3, random_state=2)
    assert acc >= 0.80, acc


def test_c2st_deterministic_given_state():
    rng = np.random.default_rng(2)
    a = so3.sample_uniform(rng, size=520)
    b = targets.sample_target("three-stripes", 520, rng).rotations
    r1 = evaluation.c2st(a, b, k_folds=2, random_state=7)
    r2 = evaluation.c2st(a, b, k_folds=2, random_state=7)
    assert r1 == r2


def test_c2st_input_validation():
    rng = np.random.default_rng(3)
    a = so3.sample_uniform(rng, size=499)
    b = so3.sample_uniform(rng, size=600)
    with pytest.raises(InsufficientSamples):
        evaluation.c2st(a, b)
    with pytest.raises(ValueError):
        evaluation.c2st(b, b, k_folds=1)


def test_cloud_validation():
    pos = np.zeros((4, 3))
    with pytest.raises(ValueError):
        evaluation.OrientedPointCloud(pos, np.full((4, 3), 0.5))
    with pytest.raises(ShapeMismatch):
        evaluation.OrientedPointCloud(pos, np.zeros((3, 3)))
    with pytest.raises(ShapeMismatch):
        evaluation.OrientedPointCloud(np.zeros((4, 2)), np.zeros((4, 2)))


def _line_cloud(n, axis):
    pos = np.zeros((n, 3))
    pos[:, 2] = np.arange(n, dtype=float)
    axes = np.tile(np.asarray(axis, dtype=float), (n, 1))
    return evaluation.OrientedPointCloud(pos, axes)


def test_ed_extremes_are_exact():
    bins = [(0.5, 1.5)]
    # axes along the line: |e . rhat| = 1 -> omega = 2/3
    omega, err = evaluation.ed_correlation(_line_cloud(32, [0.0, 0.0, 1.0]), bins, n_jackknife=4)
    assert abs(omega[0] - 2.0 / 3.0) < 1e-12
    # axes perpendicular: |e . rhat| = 0 -> omega = -1/3
    omega, err = evaluation.ed_correlation(_line_cloud(32, [1.0, 0.0, 0.0]), bins, n_jackknife=4)
    assert abs(omega[0] + 1.0 / 3.0) < 1e-12


def test_ed_isotropic_within_errors():
    rng = np.random.default_rng(4)
    n = 800
    pos = rng.normal(0, 1, (n, 3))
    axes = rng.normal(0, 1, (n, 3))
    axes /= np.linalg.norm(axes, axis=1, keepdims=True)
    cloud = evaluation.OrientedPointCloud(pos, axes)
    bins = [(0.0, 1.0), (1.0, 2.0), (2.0, 3.0)]
    omega, err = evaluation.ed_correlation(cloud, bins)
    assert np.all(np.isfinite(omega)) and np.all(err > 0.0)
    assert np.all(np.abs(omega) < 3.0 * err), (omega, err)


def test_ed_empty_bin_is_nan():
    cloud = _line_cloud(8, [0.0, 0.0, 1.0])
    omega, err = evaluation.ed_correlation(cloud, [(100.0, 101.0)], n_jackknife=4)
    assert np.isnan(omega[0]) and np.isnan(err[0])


def test_ed_bin_validation():
    cloud = _line_cloud(8, [0.0, 0.0, 1.0])
    with pytest.raises(ValueError):
        evaluation.ed_correlation(cloud, [(1.0, 0.5)])
    with pytest.raises(ValueError):
        evaluation.ed_correlation(cloud, [(-1.0, 0.5)])
    with pytest.raises(ValueError):
        evaluation.ed_correlation(cloud, [(0.0, 1.0)], n_jackknife=1)


def test_ed_detects_radial_alignment():
    # axes pointing away from the centroid correlate positively with rhat
    rng = np.random.default_rng(5)
    n = 500
    pos = rng.normal(0, 1, (n, 3))
    axes = pos / np.linalg.norm(pos, axis=1, keepdims=True)
    cloud = evaluation.OrientedPointCloud(pos, axes)
    omega, err = evaluation.ed_correlation(cloud, [(1.5, 4.0)])
    assert omega[0] > 0.05
