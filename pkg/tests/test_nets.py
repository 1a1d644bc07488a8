"""Plain-numpy MLP, Adam, and feature assembly."""

from __future__ import annotations

import numpy as np
import pytest

from so3diffusion import nets, so3
from so3diffusion.errors import ShapeMismatch


def test_init_shapes_and_bias_zero():
    rng = np.random.default_rng(0)
    p = nets.mlp_init([5, 16, 16, 3], rng)
    assert p.widths == [5, 16, 16, 3]
    assert [W.shape for W in p.weights] == [(5, 16), (16, 16), (16, 3)]
    assert all(np.all(b == 0.0) for b in p.biases)
    assert p.activation == "leaky_relu"


def test_forward_shapes_and_linearity_of_last_layer():
    rng = np.random.default_rng(1)
    p = nets.mlp_init([4, 8, 2], rng)
    x = rng.normal(0, 1, (10, 4))
    out = nets.mlp_forward(p, x)
    assert out.shape == (10, 2)
    single = nets.mlp_forward(p, x[0])
    assert single.shape == (2,)
    assert np.allclose(single, out[0])
    with pytest.raises(ShapeMismatch):
        nets.mlp_forward(p, np.zeros((10, 5)))


def test_leaky_relu_negative_slope():
    rng = np.random.default_rng(2)
    # single hidden unit forced negative: out scales by LEAKY_SLOPE
    p = nets.MLPParams(
        [np.array([[1.0]]), np.array([[1.0]])],
        [np.array([0.0]), np.array([0.0])],
    )
    pos = nets.mlp_forward(p, np.array([[2.0]]))[0, 0]
    neg = nets.mlp_forward(p, np.array([[-2.0]]))[0, 0]
    assert pos == 2.0
    assert neg == -2.0 * nets.LEAKY_SLOPE


def test_backward_matches_finite_differences():
    rng = np.random.default_rng(3)
    p = nets.mlp_init([6, 7, 5, 2], rng)
    x = rng.normal(0, 1, (9, 6))
    up = rng.normal(0, 1, (9, 2))
    grads, dx = nets.mlp_backward(p, x, up)
    h = 1e-6

    def loss(q):
        return np.sum(up * nets.mlp_forward(q, x))

    for k in range(len(p.weights)):
        W = p.weights[k]
        for idx in [(0, 0), (W.shape[0] - 1, W.shape[1] - 1), (W.shape[0] // 2, 0)]:
            q = p.copy()
            q.weights[k][idx] += h
            hi = loss(q)
            q = p.copy()
            q.weights[k][idx] -= h
            lo = loss(q)
            fd = (hi - lo) / (2 * h)
            assert abs(grads.weights[k][idx] - fd) < 1e-4 * max(1.0, abs(fd))
        for j in [0, p.biases[k].shape[0] - 1]:
            q = p.copy()
            q.biases[k][j] += h
            hi = loss(q)
            q = p.copy()
            q.biases[k][j] -= h
            lo = loss(q)
            fd = (hi - lo) / (2 * h)
            assert abs(grads.biases[k][j] - fd) < 1e-4 * max(1.0, abs(fd))
    # input gradient
    for idx in [(0, 0), (4, 3), (8, 5)]:
        xp = x.copy()
        xp[idx] += h
        xm = x.copy()
        xm[idx] -= h
        fd = (np.sum(up * nets.mlp_forward(p, xp)) - np.sum(up * nets.mlp_forward(p, xm))) / (2 * h)
        assert abs(dx[idx] - fd) < 1e-4 * max(1.0, abs(fd))


def test_backward_single_sample_shape():
    rng = np.random.default_rng(4)
    p = nets.mlp_init([3, 4, 2], rng)
    grads, dx = nets.mlp_backward(p, np.ones(3), np.ones(2))
    assert dx.shape == (3,)
    assert grads.weights[0].shape == (3, 4)


def test_adam_first_step_magnitude_is_lr():
    rng = np.random.default_rng(5)
    p = nets.mlp_init([2, 3], rng)
    g = nets.MLPParams([np.ones((2, 3))], [np.full(3, -2.0)])
    st = nets.adam_init(p, lr=1e-3)
    p2, st2 = nets.adam_step(p, g, st)
    # bias-corrected first step is lr * sign(g) regardless of magnitude
    assert np.abs((p.weights[0] - p2.weights[0]) - 1e-3).max() < 1e-9
    assert np.abs((p.biases[0] - p2.biases[0]) + 1e-3).max() < 1e-9
    assert st2.step == 1


def test_adam_converges_on_quadratic():
    rng = np.random.default_rng(6)
    p = nets.mlp_init([1, 1], rng)
    target = 0.73
    st = nets.adam_init(p, lr=5e-2)
    x = np.ones((1, 1))
    for _ in range(400):
        out = nets.mlp_forward(p, x)
        up = 2 * (out - target)
        grads, _ = nets.mlp_backward(p, x, up)
        p, st = nets.adam_step(p, grads, st)
    assert abs(nets.mlp_forward(p, x)[0, 0] - target) < 1e-3


def test_featurize_layout():
    rng = np.random.default_rng(7)
    x = so3.sample_uniform(rng, size=4)
    out = nets.featurize(x, 0.25)
    assert out.shape == (4, 10)
    assert np.allclose(out[:, :9], x.reshape(4, 9))
    assert np.allclose(out[:, 9], np.log(0.25))
    per = nets.featurize(x, np.array([0.1, 0.2, 0.3, 0.4]))
    assert np.allclose(per[:, 9], np.log([0.1, 0.2, 0.3, 0.4]))
    single = nets.featurize(x[0], 0.25)
    assert single.shape == (10,)
    assert np.allclose(single, out[0])


def test_featurize_context_block():
    rng = np.random.default_rng(8)
    x = so3.sample_uniform(rng, size=3)
    ctx = np.array([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]])
    out = nets.featurize(x, 1.0, context=ctx)
    assert out.shape == (3, 12)
    assert np.allclose(out[:, 10:], ctx)
    tiled = nets.featurize(x, 1.0, context=np.array([9.0, 8.0]))
    assert np.allclose(tiled[:, 10:], [[9.0, 8.0]] * 3)
    with pytest.raises(ShapeMismatch):
        nets.featurize(x, 1.0, context=np.zeros((2, 2)))
    with pytest.raises(ValueError):
        nets.featurize(x, 0.0)
