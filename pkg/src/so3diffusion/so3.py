"""Core operations on the rotation group SO(3).

Rotations are plain numpy arrays of shape (..., 3, 3), tangent vectors are
(..., 3) axis-angle coordinates in the basis of the standard generators
hat(e_1), hat(e_2), hat(e_3), and quaternions are (..., 4) arrays in
(a, b, c, d) scalar-first order on the canonical hemisphere a >= 0.
All functions broadcast over leading batch dimensions.
"""

from __future__ import annotations

import numpy as np

from .errors import DegenerateFrame, NonUnitQuaternion, NotRotation, NotSkew

_SKEW_TOL = 1e-8
_ROT_TOL = 1e-6
_QUAT_TOL = 1e-6
_SMALL_ANGLE = 1e-4
_NEAR_PI = 1e-4
_FRAME_FLOOR = 1e-12

_EYE3 = np.eye(3)


def hat(v: np.ndarray) -> np.ndarray:
    """Map tangent coordinates (..., 3) to antisymmetric matrices (..., 3, 3).

    hat(v) @ w == cross(v, w) for all w.
    """
    v = np.asarray(v, dtype=float)
    A = np.zeros(v.shape[:-1] + (3, 3))
    A[..., 0, 1] = -v[..., 2]
    A[..., 0, 2] = v[..., 1]
    A[..., 1, 0] = v[..., 2]
    A[..., 1, 2] = -v[..., 0]
    A[..., 2, 0] = -v[..., 1]
    A[..., 2, 1] = v[..., 0]
    return A


def vee(A: np.ndarray) -> np.ndarray:
    """Inverse of hat. Raises NotSkew if A is not antisymmetric."""
    A = np.asarray(A, dtype=float)
    if np.max(np.abs(A + np.swapaxes(A, -1, -2))) > _SKEW_TOL:
        raise NotSkew("matrix deviates from antisymmetry beyond 1e-8")
    return np.stack([A[..., 2, 1], A[..., 0, 2], A[..., 1, 0]], axis=-1)


def expm(v: np.ndarray) -> np.ndarray:
    """Exponential map: axis-angle coordinates to rotation matrices.

    Rodrigues formula with series fallbacks for the sin(t)/t and
    (1-cos(t))/t^2 coefficients below t = 1e-4.
    """
    v = np.asarray(v, dtype=float)
    theta = np.linalg.norm(v, axis=-1)
    t2 = theta * theta
    small = theta < _SMALL_ANGLE
    # Guard the divisions; the series branch wins where small is set.
    safe = np.where(small, 1.0, theta)
    a = np.where(small, 1.0 - t2 / 6.0 + t2 * t2 / 120.0, np.sin(safe) / safe)
    b = np.where(
        small, 0.5 - t2 / 24.0 + t2 * t2 / 720.0, (1.0 - np.cos(safe)) / (safe * safe)
    )
    K = hat(v)
    K2 = K @ K
    return _EYE3 + a[..., None, None] * K + b[..., None, None] * K2


def _check_rotation(R: np.ndarray) -> None:
    err = np.max(np.abs(np.swapaxes(R, -1, -2) @ R - _EYE3))
    if err > _ROT_TOL or np.min(np.linalg.det(R)) < 0.0:
        raise NotRotation(
            f"matrix not orthogonal with det +1 (orthogonality error {err:.2e})"
        )


def rotation_angle(R: np.ndarray) -> np.ndarray:
    """Principal rotation angle in [0, pi], clamped against roundoff."""
    R = np.asarray(R, dtype=float)
    tr = np.trace(R, axis1=-2, axis2=-1)
    return np.arccos(np.clip((tr - 1.0) / 2.0, -1.0, 1.0))


def logm(R: np.ndarray) -> np.ndarray:
    """Logarithm map: rotation matrices to principal axis-angle coordinates.

    Near angle 0 the theta/sin(theta) factor uses a second-order series;
    near pi the axis is recovered from the symmetric part via its largest
    diagonal entry, with the sign taken from the antisymmetric part when
    resolvable and fixed to the largest positive component at exactly pi.

    Raises:
        NotRotation: if R is not orthogonal with det +1 within 1e-6.
    """
    R = np.asarray(R, dtype=float)
    _check_rotation(R)
    return _logm_raw(R)


def _logm_raw(R: np.ndarray) -> np.ndarray:
    theta = rotation_angle(R)
    s = 0.5 * np.stack(
        [
            R[..., 2, 1] - R[..., 1, 2],
            R[..., 0, 2] - R[..., 2, 0],
            R[..., 1, 0] - R[..., 0, 1],
        ],
        axis=-1,
    )  # equals sin(theta) * axis
    t2 = theta * theta
    small = theta < _SMALL_ANGLE
    near_pi = (np.pi - theta) < _NEAR_PI
    mid = ~small & ~near_pi
    safe_sin = np.where(mid, np.sin(np.where(mid, theta, 1.0)), 1.0)
    scale = np.where(mid, theta / safe_sin, 1.0 + t2 / 6.0 + 7.0 * t2 * t2 / 360.0)
    v = scale[..., None] * s

    if np.any(near_pi):
        idx = np.nonzero(near_pi)
        Rn = R[idx]
        tn = theta[near_pi]
        sn = s[idx]
        # (R + R^T)/2 = cos(t) I + (1 - cos(t)) a a^T; solve for a a^T.
        c = np.cos(tn)
        M = (0.5 * (Rn + np.swapaxes(Rn, -1, -2)) - c[:, None, None] * _EYE3) / (
            1.0 - c
        )[:, None, None]
        diag = np.clip(np.diagonal(M, axis1=-2, axis2=-1), 0.0, None)
        j = np.argmax(diag, axis=-1)
        rows = np.arange(len(j))
        axis = M[rows, :, j]
        axis = axis / np.linalg.norm(axis, axis=-1, keepdims=True)
        dot = np.sum(axis * sn, axis=-1)
        sign = np.where(dot > 1e-12, 1.0, np.where(dot < -1e-12, -1.0, 0.0))
        # At exactly pi the antisymmetric part vanishes; fix the sign so the
        # largest-magnitude component is positive.
        und = sign == 0.0
        if np.any(und):
            k = np.argmax(np.abs(axis[und]), axis=-1)
            comp = axis[und][np.arange(k.size), k]
            sign[und] = np.where(comp >= 0.0, 1.0, -1.0)
        v[idx] = (tn * sign)[:, None] * axis
    return v


def compose(R1: np.ndarray, R2: np.ndarray) -> np.ndarray:
    """Group product R1 @ R2."""
    return np.asarray(R1, dtype=float) @ np.asarray(R2, dtype=float)


def inverse(R: np.ndarray) -> np.ndarray:
    """Group inverse (transpose)."""
    return np.swapaxes(np.asarray(R, dtype=float), -1, -2)


def geodesic_angle(R1: np.ndarray, R2: np.ndarray) -> np.ndarray:
    """Bi-invariant geodesic distance: the angle of R1^T R2, in [0, pi]."""
    R1 = np.asarray(R1, dtype=float)
    R2 = np.asarray(R2, dtype=float)
    tr = np.einsum("...ij,...ij->...", R1, R2)
    return np.arccos(np.clip((tr - 1.0) / 2.0, -1.0, 1.0))


def quat_canonical(q: np.ndarray) -> np.ndarray:
    """Flip quaternion signs onto the canonical hemisphere a >= 0.

    Ties at a == 0 are broken toward the first nonzero of (b, c, d) positive.
    """
    q = np.asarray(q, dtype=float)
    b_key = np.where(q[..., 1] != 0.0, np.sign(q[..., 1]), 0.0)
    c_key = np.where(q[..., 2] != 0.0, np.sign(q[..., 2]), 0.0)
    d_key = np.where(q[..., 3] != 0.0, np.sign(q[..., 3]), 0.0)
    tie = np.where(b_key != 0.0, b_key, np.where(c_key != 0.0, c_key, d_key))
    sign = np.where(q[..., 0] != 0.0, np.sign(q[..., 0]), tie)
    sign = np.where(sign == 0.0, 1.0, sign)
    return q * sign[..., None]


def to_quaternion(R: np.ndarray) -> np.ndarray:
    """Rotation matrices to canonical-hemisphere unit quaternions (a, b, c, d).

    Uses the largest-pivot variant of Shepperd's method for stability at
    all angles.
    """
    R = np.asarray(R, dtype=float)
    _check_rotation(R)
    t = np.trace(R, axis1=-2, axis2=-1)
    d0, d1, d2 = R[..., 0, 0], R[..., 1, 1], R[..., 2, 2]

    # Candidate quaternions from each of the four pivots.
    qa = np.empty(R.shape[:-2] + (4,))
    r = np.sqrt(np.clip(1.0 + t, 0.0, None))
    qa[..., 0] = 0.5 * r
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = np.where(r > 0, 0.5 / np.where(r > 0, r, 1.0), 0.0)
    qa[..., 1] = (R[..., 2, 1] - R[..., 1, 2]) * inv
    qa[..., 2] = (R[..., 0, 2] - R[..., 2, 0]) * inv
    qa[..., 3] = (R[..., 1, 0] - R[..., 0, 1]) * inv

    def pivot(i, j, k):
        q = np.empty(R.shape[:-2] + (4,))
        r = np.sqrt(np.clip(1.0 + R[..., i, i] - R[..., j, j] - R[..., k, k], 0.0, None))
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = np.where(r > 0, 0.5 / np.where(r > 0, r, 1.0), 0.0)
        q[..., 0] = (R[..., k, j] - R[..., j, k]) * inv
        q[..., 1 + i] = 0.5 * r
        q[..., 1 + j] = (R[..., j, i] + R[..., i, j]) * inv
        q[..., 1 + k] = (R[..., k, i] + R[..., i, k]) * inv
        return q

    qs = np.stack([qa, pivot(0, 1, 2), pivot(1, 2, 0), pivot(2, 0, 1)], axis=-2)
    choice = np.argmax(np.stack([t, d0, d1, d2], axis=-1), axis=-1)
    q = np.take_along_axis(qs, choice[..., None, None], axis=-2)[..., 0, :]
    q = q / np.linalg.norm(q, axis=-1, keepdims=True)
    return quat_canonical(q)


def from_quaternion(q: np.ndarray) -> np.ndarray:
    """Unit quaternions (a, b, c, d) to rotation matrices.

    Raises:
        NonUnitQuaternion: if any norm deviates from 1 by more than 1e-6.
    """
    q = np.asarray(q, dtype=float)
    n = np.linalg.norm(q, axis=-1)
    if np.max(np.abs(n - 1.0)) > _QUAT_TOL:
        raise NonUnitQuaternion("quaternion norm deviates from 1 beyond 1e-6")
    q = q / n[..., None]
    a, b, c, d = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    R = np.empty(q.shape[:-1] + (3, 3))
    R[..., 0, 0] = a * a + b * b - c * c - d * d
    R[..., 0, 1] = 2 * (b * c - a * d)
    R[..., 0, 2] = 2 * (b * d + a * c)
    R[..., 1, 0] = 2 * (b * c + a * d)
    R[..., 1, 1] = a * a - b * b + c * c - d * d
    R[..., 1, 2] = 2 * (c * d - a * b)
    R[..., 2, 0] = 2 * (b * d - a * c)
    R[..., 2, 1] = 2 * (c * d + a * b)
    R[..., 2, 2] = a * a - b * b - c * c + d * d
    return R


def quat_product(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Hamilton product p * q (composition order matches matrix product)."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    a1, b1, c1, d1 = p[..., 0], p[..., 1], p[..., 2], p[..., 3]
    a2, b2, c2, d2 = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    return np.stack(
        [
            a1 * a2 - b1 * b2 - c1 * c2 - d1 * d2,
            a1 * b2 + b1 * a2 + c1 * d2 - d1 * c2,
            a1 * c2 - b1 * d2 + c1 * a2 + d1 * b2,
            a1 * d2 + b1 * c2 - c1 * b2 + d1 * a2,
        ],
        axis=-1,
    )


def quat_conjugate(q: np.ndarray) -> np.ndarray:
    """Quaternion conjugate (group inverse for unit quaternions)."""
    q = np.asarray(q, dtype=float)
    return q * np.array([1.0, -1.0, -1.0, -1.0])


def quat_power(q: np.ndarray, a) -> np.ndarray:
    """Real power q**a through the quaternion logarithm.

    For a unit quaternion with half-angle h and axis u this is
    (cos(a h), sin(a h) u); near-identity inputs use the first-order limit.
    """
    q = np.asarray(q, dtype=float)
    a = np.asarray(a, dtype=float)
    vec = q[..., 1:]
    vn = np.linalg.norm(vec, axis=-1)
    half = np.arctan2(vn, q[..., 0])
    new_half = a * half
    tiny = vn < _FRAME_FLOOR
    safe_vn = np.where(tiny, 1.0, vn)
    axis = vec / safe_vn[..., None]
    out = np.empty(np.broadcast_shapes(q[..., 0].shape, a.shape) + (4,))
    out[..., 0] = np.cos(new_half)
    sin_term = np.sin(new_half)[..., None] * axis
    # Limit vn -> 0: sin(a * half) * axis -> a * vec.
    out[..., 1:] = np.where(tiny[..., None], a[..., None] * vec, sin_term)
    return out


def vp_compose(x: np.ndarray, delta: np.ndarray, alpha) -> np.ndarray:
    """Variance-preserving composition x**sqrt(alpha) * delta**sqrt(1-alpha).

    Powers are quaternion powers; the result is returned as a rotation
    matrix. alpha must lie in [0, 1].
    """
    alpha = np.asarray(alpha, dtype=float)
    if np.any(alpha < 0.0) or np.any(alpha > 1.0):
        raise ValueError("alpha must lie in [0, 1]")
    qx = quat_power(to_quaternion(x), np.sqrt(alpha))
    qd = quat_power(to_quaternion(delta), np.sqrt(1.0 - alpha))
    return from_quaternion(_renorm(quat_product(qx, qd)))


def _renorm(q: np.ndarray) -> np.ndarray:
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def contract(x: np.ndarray, lam) -> np.ndarray:
    """Geodesic contraction of x toward the identity: expm(lam * logm(x)).

    lam in [0, 1]; agrees with the quaternion power q^lam up to the axis
    sign ambiguity at angle exactly pi.
    """
    x = np.asarray(x, dtype=float)
    lam = np.asarray(lam, dtype=float)
    return expm(lam[..., None] * _logm_raw(x))


def from_sixd(u: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Two 3-vectors to a rotation matrix by Gram-Schmidt orthonormalization.

    Columns are c1 = normalize(u), c2 = normalize(w - (c1.w) c1),
    c3 = c1 x c2.

    Raises:
        DegenerateFrame: if |u| or the residual of w falls below 1e-12.
    """
    u = np.asarray(u, dtype=float)
    w = np.asarray(w, dtype=float)
    nu = np.linalg.norm(u, axis=-1)
    if np.any(nu < _FRAME_FLOOR):
        raise DegenerateFrame("first frame vector has near-zero norm")
    c1 = u / nu[..., None]
    proj = np.sum(c1 * w, axis=-1, keepdims=True)
    res = w - proj * c1
    nr = np.linalg.norm(res, axis=-1)
    if np.any(nr < _FRAME_FLOOR):
        raise DegenerateFrame("second frame vector is near-parallel to the first")
    c2 = res / nr[..., None]
    c3 = np.cross(c1, c2)
    return np.stack([c1, c2, c3], axis=-1)


def from_sixd_vjp(
    u: np.ndarray, w: np.ndarray, dR: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Reverse-mode derivative of from_sixd.

    Given upstream gradients dR with respect to the produced rotation,
    returns (du, dw) with respect to the two frame vectors.
    """
    u = np.asarray(u, dtype=float)
    w = np.asarray(w, dtype=float)
    dR = np.asarray(dR, dtype=float)
    nu = np.linalg.norm(u, axis=-1, keepdims=True)
    c1 = u / nu
    proj = np.sum(c1 * w, axis=-1, keepdims=True)
    res = w - proj * c1
    nr = np.linalg.norm(res, axis=-1, keepdims=True)
    c2 = res / nr

    dc1 = dR[..., :, 0]
    dc2 = dR[..., :, 1]
    dc3 = dR[..., :, 2]
    # c3 = c1 x c2
    dc1 = dc1 + np.cross(c2, dc3)
    dc2 = dc2 + np.cross(dc3, c1)
    # c2 = res / |res|
    dres = (dc2 - np.sum(dc2 * c2, axis=-1, keepdims=True) * c2) / nr
    # res = w - (c1.w) c1
    dw = dres - np.sum(dres * c1, axis=-1, keepdims=True) * c1
    dc1 = dc1 - np.sum(dres * c1, axis=-1, keepdims=True) * w - proj * dres
    # c1 = u / |u|
    du = (dc1 - np.sum(dc1 * c1, axis=-1, keepdims=True) * c1) / nu
    return du, dw


def sample_uniform(rng: np.random.Generator, size=None) -> np.ndarray:
    """Haar-uniform rotations from normalized 4-dimensional normal draws."""
    shape = (4,) if size is None else (size, 4)
    q = rng.standard_normal(shape)
    q = quat_canonical(q / np.linalg.norm(q, axis=-1, keepdims=True))
    return from_quaternion(q)
