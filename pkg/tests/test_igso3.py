"""Isotropic Gaussian on SO(3): density, derivatives, sampling."""

from __future__ import annotations

import numpy as np
import pytest
from scipy import integrate, stats

from so3diffusion import igso3, so3


def _series_terms(omega, eps, l_max=60):
    """Character-sum terms (independent re-derivation, series route only)."""
    om = np.asarray(omega, dtype=float)[..., None]
    ls = np.arange(l_max + 1, dtype=float)
    half = ls + 0.5
    weight = (2 * ls + 1) * np.exp(-ls * (ls + 1) * eps)
    chi = np.sin(half * om) / np.sin(om / 2)
    dchi = (half * np.cos(half * om) * np.sin(om / 2) - 0.5 * np.cos(om / 2) * np.sin(half * om)) / np.sin(om / 2) ** 2
    f = np.sum(weight * chi, axis=-1)
    df_dom = np.sum(weight * dchi, axis=-1)
    df_dep = np.sum(-ls * (ls + 1) * weight * chi, axis=-1)
    return f, df_dom, df_dep


def test_normalizes_over_haar_angle_marginal():
    # integral of f(w) (1 - cos w)/pi over [0, pi] must be 1
    for eps in (0.02, 0.1, 0.5, 1.0, 2.0, 10.0):
        om = np.linspace(1e-6, np.pi, 40_001)
        vals = igso3.f_eps(om, eps) * (1 - np.cos(om)) / np.pi
        total = integrate.simpson(vals, x=om)
        assert abs(total - 1.0) < 1e-4, (eps, total)


def test_series_and_small_eps_form_agree_at_crossover():
    om = np.linspace(0.05, 3.0, 200)
    for eps in (0.8, 1.0, 1.2):
        a = igso3.f_series(om, eps)
        b = igso3.f_approx(om, eps)
        rel = np.abs(a - b) / np.abs(a)
        assert rel.max() < 1e-2, (eps, rel.max())


def test_f_eps_routes_by_scale():
    om = np.array([0.3, 1.0, 2.5])
    assert np.allclose(igso3.f_eps(om, 2.0), igso3.f_series(om, 2.0))
    assert np.allclose(igso3.f_eps(om, 0.05), igso3.f_approx(om, 0.05))


def test_dlogf_domega_matches_series_derivative():
    om = np.linspace(0.1, 3.0, 60)
    eps = 1.2
    f, df_dom, _ = _series_terms(om, eps)
    expected = df_dom / f
    got = igso3.dlogf_domega(om, np.full_like(om, eps))
    assert np.abs(got - expected).max() < 1e-6


def test_dlogf_deps_matches_series_derivative():
    om = np.linspace(0.1, 3.0, 60)
    eps = 1.2
    f, _, df_dep = _series_terms(om, eps)
    expected = df_dep / f
    got = igso3.dlogf_deps(om, np.full_like(om, eps))
    rel = np.abs(got - expected) / np.maximum(np.abs(expected), 1e-12)
    assert rel.max() < 1e-5


def test_heat_equation_consistency_small_eps():
    # d log f / d eps = (f'' + f' cot(w/2)) / f on the closed-form route;
    # validate via high-order FD of f itself, all through f_eps.
    om = np.linspace(0.2, 2.5, 30)
    eps = 0.3
    h = 1e-5
    f0 = igso3.f_eps(om, eps)
    d1 = (igso3.f_eps(om + h, eps) - igso3.f_eps(om - h, eps)) / (2 * h)
    d2 = (igso3.f_eps(om + h, eps) - 2 * f0 + igso3.f_eps(om - h, eps)) / h**2
    lap = d2 + d1 / np.tan(om / 2)
    got = igso3.dlogf_deps(om, np.full_like(om, eps))
    rel = np.abs(got - lap / f0) / np.maximum(np.abs(got), 1e-9)
    assert rel.max() < 1e-3


def test_score_matches_fd_of_log_density():
    rng = np.random.default_rng(21)
    h = 1e-6
    basis = np.eye(3)
    for eps in (0.05, 0.4, 1.5):
        mu = so3.sample_uniform(rng, size=40)
        params = [igso3.IGParams(m, eps) for m in mu]
        x = np.stack([igso3.sample(p, rng) for p in params])
        s = np.stack([igso3.score(xi, p) for xi, p in zip(x, params)])
        for i in range(3):
            step = so3.expm(h * basis[i])
            lp_p = np.array(
                [igso3.log_density(xi @ step, p) for xi, p in zip(x, params)]
            )
            lp_m = np.array(
                [igso3.log_density(xi @ step.T, p) for xi, p in zip(x, params)]
            )
            fd = (lp_p - lp_m) / (2 * h)
            rel = np.abs(s[:, i] - fd) / np.maximum(np.abs(fd), 1e-3)
            assert rel.max() < 1e-3, (eps, i, rel.max())


def test_score_rejects_near_cut_locus():
    mu = np.eye(3)
    x = so3.expm(np.array([np.pi - 1e-6, 0.0, 0.0]))
    with pytest.raises(Exception):
        igso3.score(x, igso3.IGParams(mu, 0.5))


def test_score_deep_tail_is_finite():
    # f underflows at (omega ~ 3, eps = 1e-3); fallback must stay finite
    v = igso3.dlogf_domega(np.array([3.0]), np.array([1e-3]))
    assert np.isfinite(v).all()
    # and close to the Gaussian-tail slope -w/(2 eps)
    assert abs(v[0] + 3.0 / (2 * 1e-3)) / (3.0 / (2 * 1e-3)) < 0.01


def test_log_f_floored():
    assert np.isfinite(igso3.log_f(np.pi - 1e-3, 1e-3))
    assert igso3.log_f(np.pi - 1e-3, 1e-3) >= np.log(1e-300) - 1.0


def test_small_eps_tangent_is_gaussian():
    rng = np.random.default_rng(22)
    eps = 0.005
    ang, axes = igso3.sample_tangent_batch(np.full(20_000, eps), rng)
    tang = ang[:, None] * axes
    for i in range(3):
        res = stats.kstest(tang[:, i], "norm", args=(0.0, np.sqrt(2 * eps)))
        assert res.pvalue > 1e-3, (i, res)


def test_large_eps_angle_is_haar():
    rng = np.random.default_rng(23)
    ang, _ = igso3.sample_tangent_batch(np.full(20_000, 10.0), rng)
    res = stats.kstest(ang, lambda t: igso3.uniform_angle_cdf(t))
    assert res.pvalue > 1e-3, res


def test_convolution_closure():
    # IG(I, a) right-perturbed by IG(I, b) has the IG(I, a + b) angle law
    rng = np.random.default_rng(24)
    n = 20_000
    a, b = 0.3, 0.5
    x = igso3.sample(igso3.IGParams(np.eye(3), a), rng, size=n)
    ang, axes = igso3.sample_tangent_batch(np.full(n, b), rng)
    y = x @ so3.expm(ang[:, None] * axes)
    table = igso3.build_cdf(a + b)

    def cdf(t):
        return np.interp(t, table.grid, table.cdf)

    res = stats.kstest(so3.rotation_angle(y), cdf)
    assert res.pvalue > 1e-3, res


def test_angle_cdf_table_shape():
    table = igso3.build_cdf(0.25)
    assert table.grid[0] == 0.0 and abs(table.grid[-1] - np.pi) < 1e-12
    assert table.cdf[0] == 0.0 and abs(table.cdf[-1] - 1.0) < 1e-12
    assert np.all(np.diff(table.cdf) >= 0.0)


def test_cdf_cache_reuses_quantized_tables():
    t1 = igso3.build_cdf(0.3701)
    t2 = igso3.build_cdf(0.37012)
    t3 = igso3.build_cdf(0.3702)
    assert t1 is t2
    assert t1 is not t3


def test_eps_quantize():
    assert igso3.eps_quantize(5e-4) == 5e-4
    assert abs(igso3.eps_quantize(0.12345) - 0.1234) < 1e-12
    batch = igso3.eps_quantize_batch(np.array([5e-4, 0.12345, 2.0]))
    assert batch[0] == 5e-4
    assert abs(batch[1] - 0.1234) < 1e-12
    with pytest.raises(ValueError):
        igso3.eps_quantize(-1.0)
    with pytest.raises(ValueError):
        igso3.eps_quantize_batch(np.array([0.1, np.nan]))


def test_sample_tangent_batch_deterministic_and_grouped():
    epss = np.array([0.2, 0.9, 0.2, 0.9, 0.2, 0.05])
    a1, x1 = igso3.sample_tangent_batch(epss, np.random.default_rng(7))
    a2, x2 = igso3.sample_tangent_batch(epss, np.random.default_rng(7))
    assert np.array_equal(a1, a2) and np.array_equal(x1, x2)
    assert a1.shape == (6,) and x1.shape == (6, 3)
    assert np.abs(np.linalg.norm(x1, axis=1) - 1.0).max() < 1e-12


def test_sample_shapes_and_mean_location():
    rng = np.random.default_rng(25)
    mu = so3.sample_uniform(rng)
    params = igso3.IGParams(mu, 0.05)
    one = igso3.sample(params, rng)
    assert one.shape == (3, 3)
    many = igso3.sample(params, rng, size=4000)
    assert many.shape == (4000, 3, 3)
    # small eps concentrates near mu
    d = so3.geodesic_angle(many, np.broadcast_to(mu, many.shape))
    assert np.median(d) < 0.5


def test_igparams_validation():
    with pytest.raises(ValueError):
        igso3.IGParams(np.eye(3), 0.0)
    with pytest.raises(Exception):
        igso3.IGParams(1.5 * np.eye(3), 0.5)


def test_log_density_invariant_under_left_action():
    rng = np.random.default_rng(26)
    mu = so3.sample_uniform(rng)
    x = igso3.sample(igso3.IGParams(mu, 0.3), rng)
    g = so3.sample_uniform(rng)
    a = igso3.log_density(x, igso3.IGParams(mu, 0.3))
    b = igso3.log_density(g @ x, igso3.IGParams(g @ mu, 0.3))
    assert abs(a - b) < 1e-9
