"""Minimal fully-connected networks with exact reverse-mode gradients.

Everything is plain float64 numpy. Layers are affine with leaky-ReLU
activations (slope 0.01) on all but the last layer, which stays linear.
The optimizer is Adam with bias correction.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ShapeMismatch

LEAKY_SLOPE = 0.01

ADAM_LR = 1e-4
ADAM_BETA1 = 0.90
ADAM_BETA2 = 0.95
ADAM_EPS = 1e-8


@dataclass
class MLPParams:
    """Weights and biases of a multilayer perceptron.

    weights[k] has shape (widths[k], widths[k+1]); biases[k] has shape
    (widths[k+1],). The activation tag is stored for checkpoint round trips.
    """

    weights: list
    biases: list
    activation: str = "leaky_relu"

    @property
    def widths(self) -> list[int]:
        return [self.weights[0].shape[0]] + [W.shape[1] for W in self.weights]

    def copy(self) -> "MLPParams":
        return MLPParams(
            [W.copy() for W in self.weights],
            [b.copy() for b in self.biases],
            self.activation,
        )


@dataclass
class AdamState:
    """First/second moment accumulators and step counter for Adam."""

    m_w: list
    v_w: list
    m_b: list
    v_b: list
    step: int = 0
    lr: float = ADAM_LR
    beta1: float = ADAM_BETA1
    beta2: float = ADAM_BETA2
    eps: float = ADAM_EPS


def mlp_init(widths: list[int], rng: np.random.Generator) -> MLPParams:
    """He-style fan-in scaled uniform weights, zero biases."""
    if len(widths) < 2 or any(w < 1 for w in widths):
        raise ValueError("widths must list at least input and output sizes")
    weights = []
    biases = []
    for d_in, d_out in zip(widths[:-1], widths[1:]):
        bound = np.sqrt(6.0 / d_in)
        weights.append(rng.uniform(-bound, bound, size=(d_in, d_out)))
        biases.append(np.zeros(d_out))
    return MLPParams(weights, biases)


def _leaky(z: np.ndarray) -> np.ndarray:
    return np.where(z >= 0.0, z, LEAKY_SLOPE * z)


def _leaky_grad(z: np.ndarray) -> np.ndarray:
    return np.where(z >= 0.0, 1.0, LEAKY_SLOPE)


def _check_input(params: MLPParams, x: np.ndarray) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    if single:
        x = x[None]
    if x.ndim != 2 or x.shape[1] != params.weights[0].shape[0]:
        raise ShapeMismatch(
            f"expected input width {params.weights[0].shape[0]}, got {x.shape}"
        )
    return x, single


def mlp_forward(params: MLPParams, x: np.ndarray) -> np.ndarray:
    """Forward pass; accepts (n, d_in) or a single (d_in,) vector."""
    x, single = _check_input(params, x)
    h = x
    last = len(params.weights) - 1
    for k, (W, b) in enumerate(zip(params.weights, params.biases)):
        z = h @ W + b
        h = z if k == last else _leaky(z)
    return h[0] if single else h


def mlp_backward(
    params: MLPParams, x: np.ndarray, upstream: np.ndarray
) -> tuple[MLPParams, np.ndarray]:
    """Exact gradients of sum(upstream * output) via reverse accumulation.

    Args:
        params: network parameters.
        x: inputs (n, d_in) or (d_in,).
        upstream: gradient of the loss with respect to the output, same
            leading shape as the forward output.

    Returns:
        (param_grads, input_grad) where param_grads mirrors MLPParams and
        weight/bias gradients are summed over the batch.
    """
    x, single = _check_input(params, x)
    upstream = np.asarray(upstream, dtype=float)
    if single:
        upstream = upstream[None]
    if upstream.shape != (x.shape[0], params.weights[-1].shape[1]):
        raise ShapeMismatch("upstream gradient shape does not match output")

    last = len(params.weights) - 1
    acts = [x]
    zs = []
    h = x
    for k, (W, b) in enumerate(zip(params.weights, params.biases)):
        z = h @ W + b
        zs.append(z)
        h = z if k == last else _leaky(z)
        acts.append(h)

    dW = [None] * len(params.weights)
    db = [None] * len(params.biases)
    delta = upstream
    for k in range(last, -1, -1):
        dW[k] = acts[k].T @ delta
        db[k] = delta.sum(axis=0)
        if k > 0:
            delta = (delta @ params.weights[k].T) * _leaky_grad(zs[k - 1])
        else:
            delta = delta @ params.weights[k].T
    grads = MLPParams(dW, db, params.activation)
    return grads, (delta[0] if single else delta)


def adam_init(
    params: MLPParams,
    lr: float = ADAM_LR,
    beta1: float = ADAM_BETA1,
    beta2: float = ADAM_BETA2,
    eps: float = ADAM_EPS,
) -> AdamState:
    """Zeroed moment accumulators matching the parameter shapes."""
    return AdamState(
        m_w=[np.zeros_like(W) for W in params.weights],
        v_w=[np.zeros_like(W) for W in params.weights],
        m_b=[np.zeros_like(b) for b in params.biases],
        v_b=[np.zeros_like(b) for b in params.biases],
        step=0,
        lr=lr,
        beta1=beta1,
        beta2=beta2,
        eps=eps,
    )


def adam_step(
    params: MLPParams, grads: MLPParams, state: AdamState
) -> tuple[MLPParams, AdamState]:
    """One bias-corrected Adam update; returns fresh params and state."""
    t = state.step + 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t

    def update(p, g, m, v):
        m_new = b1 * m + (1.0 - b1) * g
        v_new = b2 * v + (1.0 - b2) * g * g
        p_new = p - state.lr * (m_new / c1) / (np.sqrt(v_new / c2) + state.eps)
        return p_new, m_new, v_new

    new_w, new_mw, new_vw = [], [], []
    for p, g, m, v in zip(params.weights, grads.weights, state.m_w, state.v_w):
        p_n, m_n, v_n = update(p, g, m, v)
        new_w.append(p_n)
        new_mw.append(m_n)
        new_vw.append(v_n)
    new_b, new_mb, new_vb = [], [], []
    for p, g, m, v in zip(params.biases, grads.biases, state.m_b, state.v_b):
        p_n, m_n, v_n = update(p, g, m, v)
        new_b.append(p_n)
        new_mb.append(m_n)
        new_vb.append(v_n)
    return (
        MLPParams(new_w, new_b, params.activation),
        replace(state, m_w=new_mw, v_w=new_vw, m_b=new_mb, v_b=new_vb, step=t),
    )


def featurize(
    x: np.ndarray, noise_level, context: np.ndarray | None = None
) -> np.ndarray:
    """Network inputs: 9 flattened matrix entries, log noise level, context.

    Args:
        x: rotations (n, 3, 3) or a single (3, 3).
        noise_level: positive scalar or (n,) array.
        context: optional (n, d) or (d,) conditioning block.
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 2
    if single:
        x = x[None]
    n = x.shape[0]
    level = np.broadcast_to(np.asarray(noise_level, dtype=float), (n,))
    if np.any(level <= 0.0):
        raise ValueError("noise_level must be positive")
    cols = [x.reshape(n, 9), np.log(level)[:, None]]
    if context is not None:
        context = np.asarray(context, dtype=float)
        if context.ndim == 1:
            context = np.broadcast_to(context, (n, context.shape[0]))
        if context.shape[0] != n:
            raise ShapeMismatch("context rows do not match batch size")
        cols.append(context)
    out = np.concatenate(cols, axis=1)
    return out[0] if single else out
