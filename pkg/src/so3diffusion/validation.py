"""Input validation helpers for the estimator API."""

from __future__ import annotations

import numpy as np

from .errors import NotRotation, ShapeMismatch

_ORTHO_TOL = 1e-6


def check_rotations(X) -> np.ndarray:
    """Coerce (n, 3, 3) or flattened (n, 9) input to validated rotations.

    Raises:
        ShapeMismatch: wrong array shape.
        NotRotation: rows that are not orthogonal with det +1 within 1e-6.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 2 and X.shape[1] == 9:
        X = X.reshape(-1, 3, 3)
    if X.ndim != 3 or X.shape[1:] != (3, 3):
        raise ShapeMismatch(f"expected (n, 3, 3) or (n, 9) rotations, got {X.shape}")
    err = np.abs(np.swapaxes(X, -1, -2) @ X - np.eye(3)).max()
    if err > _ORTHO_TOL or np.min(np.linalg.det(X)) < 0.0:
        raise NotRotation(f"input rows fail orthogonality within {_ORTHO_TOL:g}")
    return np.ascontiguousarray(X)


def check_context(context, n: int, dim: int | None = None) -> np.ndarray:
    """Coerce conditioning input to shape (n, d), broadcasting one row."""
    context = np.asarray(context, dtype=float)
    if context.ndim == 0:
        context = context[None]
    if context.ndim == 1:
        if dim is not None and context.shape[0] == dim:
            context = np.broadcast_to(context, (n, dim)).copy()
        else:
            context = context[:, None]
    if context.shape[0] != n:
        raise ShapeMismatch(f"context has {context.shape[0]} rows, expected {n}")
    if dim is not None and context.shape[1] != dim:
        raise ShapeMismatch(f"context width {context.shape[1]}, expected {dim}")
    return context


def as_generator(random_state) -> np.random.Generator:
    """Coerce None, an int seed, or a Generator to a numpy Generator."""
    if random_state is None:
        return np.random.default_rng()
    if isinstance(random_state, np.random.Generator):
        return random_state
    return np.random.default_rng(random_state)
