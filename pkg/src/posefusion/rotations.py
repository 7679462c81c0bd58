"""Rotation algebra on SO(3).

Axis-angle vectors are plain 3-element float arrays: direction = rotation
axis, magnitude = angle in radians. Rotations are 3x3 orthonormal matrices
with determinant +1. Everything here is a pure function on values and safe
to call from multiple threads.

Batched variants accept a leading dimension (N, 3) / (N, 3, 3) and are used
by the hot evaluation paths.
"""

from __future__ import annotations

import numpy as np

# Below this angle the Rodrigues coefficients switch to their Taylor series.
SMALL_ANGLE = 1e-7

# Orthonormality / determinant tolerance for rotation validation.
ROTATION_ATOL = 1e-9


def hat(v: np.ndarray) -> np.ndarray:
    """Map a 3-vector to its skew-symmetric matrix (the ^ operator)."""
    v = np.asarray(v, dtype=float)
    return np.array(
        [
            [0.0, -v[2], v[1]],
            [v[2], 0.0, -v[0]],
            [-v[1], v[0], 0.0],
        ]
    )


def vee(m: np.ndarray) -> np.ndarray:
    """Inverse of :func:`hat`: extract the 3-vector of a skew matrix."""
    m = np.asarray(m, dtype=float)
    return np.array([m[2, 1], m[0, 2], m[1, 0]])


def is_rotation(m: np.ndarray, atol: float = ROTATION_ATOL) -> bool:
    m = np.asarray(m, dtype=float)
    if m.shape != (3, 3) or not np.all(np.isfinite(m)):
        return False
    if not np.allclose(m.T @ m, np.eye(3), atol=atol):
        return False
    return abs(np.linalg.det(m) - 1.0) <= atol


def check_rotation(m: np.ndarray, atol: float = ROTATION_ATOL) -> np.ndarray:
    """Return m as float array, raising ValueError if it is not a rotation."""
    m = np.asarray(m, dtype=float)
    if not is_rotation(m, atol=atol):
        raise ValueError("matrix is not a valid rotation (orthonormal, det +1)")
    return m


def exp(a: np.ndarray) -> np.ndarray:
    """Rodrigues formula: axis-angle 3-vector -> rotation matrix.

    Total function; uses the quadratic Taylor expansion of the two
    coefficients below SMALL_ANGLE so the small-angle branch is smooth.
    """
    a = np.asarray(a, dtype=float)
    th2 = float(a @ a)
    th = np.sqrt(th2)
    K = hat(a)
    if th < SMALL_ANGLE:
        # sin(th)/th and (1-cos th)/th^2 expanded to second order
        c1 = 1.0 - th2 / 6.0
        c2 = 0.5 - th2 / 24.0
    else:
        c1 = np.sin(th) / th
        c2 = (1.0 - np.cos(th)) / th2
    return np.eye(3) + c1 * K + c2 * (K @ K)


def log(R: np.ndarray, validate: bool = True) -> np.ndarray:
    """Rotation matrix -> canonical axis-angle with magnitude in [0, pi].

    Branches: plain atan2 formula away from the cut locus, a symmetric
    diagonal extraction near angle pi (largest diagonal of (R+I)/2),
    and exact zero at the identity.
    """
    if validate:
        R = check_rotation(R)
    else:
        R = np.asarray(R, dtype=float)
    trace = R[0, 0] + R[1, 1] + R[2, 2]
    cos_th = np.clip((trace - 1.0) / 2.0, -1.0, 1.0)
    s_vec = 0.5 * np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    sin_th = np.linalg.norm(s_vec)
    th = np.arctan2(sin_th, cos_th)
    if th < SMALL_ANGLE:
        # first-order: log(R) ~ skew part
        return 2.0 * s_vec / (1.0 + cos_th)
    if th > np.pi - 1e-5:
        # near the cut locus sin(th) ~ 0; recover the axis from the
        # symmetric part: (R + I)/2 = cos_th I + (1-cos_th) u u^T + small skew
        S = (R + np.eye(3)) / 2.0
        k = int(np.argmax(np.diag(S)))
        u = S[:, k] - cos_th * np.eye(3)[:, k]
        u = u / np.linalg.norm(u)
        # fix the sign using the skew part where it is informative
        if sin_th > 1e-12 and float(u @ s_vec) < 0.0:
            u = -u
        return th * u
    return th * s_vec / sin_th


def geodesic_distance(R1: np.ndarray, R2: np.ndarray, validate: bool = True) -> float:
    """Angle of the relative rotation R1^T R2, in [0, pi]."""
    if validate:
        R1 = check_rotation(R1)
        R2 = check_rotation(R2)
    return float(np.linalg.norm(log(R1.T @ R2, validate=False)))


def rot_x(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def right_jacobian(a: np.ndarray) -> np.ndarray:
    """Right Jacobian of SO(3): exp((a+d)^) = exp(a^) exp((Jr(a) d)^) + O(d^2)."""
    a = np.asarray(a, dtype=float)
    th2 = float(a @ a)
    th = np.sqrt(th2)
    K = hat(a)
    if th < SMALL_ANGLE:
        return np.eye(3) - 0.5 * K + (1.0 / 6.0) * (K @ K)
    c1 = (1.0 - np.cos(th)) / th2
    c2 = (th - np.sin(th)) / (th2 * th)
    return np.eye(3) - c1 * K + c2 * (K @ K)


def from_quat_wxyz(q: np.ndarray) -> np.ndarray:
    """Unit quaternion (w, x, y, z) -> rotation matrix."""
    q = np.asarray(q, dtype=float)
    q = q / np.linalg.norm(q)
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def to_quat_wxyz(R: np.ndarray) -> np.ndarray:
    """Rotation matrix -> unit quaternion (w, x, y, z), w >= 0."""
    R = np.asarray(R, dtype=float)
    t = np.trace(R)
    if t > 0:
        w = 0.5 * np.sqrt(1.0 + t)
        f = 0.25 / w
        q = np.array(
            [w, f * (R[2, 1] - R[1, 2]), f * (R[0, 2] - R[2, 0]), f * (R[1, 0] - R[0, 1])]
        )
    else:
        k = int(np.argmax(np.diag(R)))
        i, j = (k + 1) % 3, (k + 2) % 3
        s = np.sqrt(1.0 + R[k, k] - R[i, i] - R[j, j])
        f = 0.5 / s
        q = np.empty(4)
        q[0] = f * (R[j, i] - R[i, j])
        q[1 + k] = 0.5 * s
        q[1 + i] = f * (R[i, k] + R[k, i])
        q[1 + j] = f * (R[j, k] + R[k, j])
    if q[0] < 0:
        q = -q
    return q / np.linalg.norm(q)


# ---------------------------------------------------------------------------
# Batched variants (leading dimension N). These skip validation; the scalar
# functions above are the checked entry points.
# ---------------------------------------------------------------------------


def hat_many(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1] = -v[..., 2]
    out[..., 0, 2] = v[..., 1]
    out[..., 1, 0] = v[..., 2]
    out[..., 1, 2] = -v[..., 0]
    out[..., 2, 0] = -v[..., 1]
    out[..., 2, 1] = v[..., 0]
    return out


def exp_many(a: np.ndarray) -> np.ndarray:
    """Rodrigues formula over a (..., 3) stack of axis-angle vectors."""
    a = np.asarray(a, dtype=float)
    th2 = np.einsum("...i,...i->...", a, a)
    th = np.sqrt(th2)
    small = th < SMALL_ANGLE
    th2_safe = np.where(small, 1.0, th2)
    c1 = np.where(small, 1.0 - th2 / 6.0, np.sin(th) / np.where(small, 1.0, th))
    c2 = np.where(small, 0.5 - th2 / 24.0, (1.0 - np.cos(th)) / th2_safe)
    K = hat_many(a)
    KK = K @ K
    return np.eye(3) + c1[..., None, None] * K + c2[..., None, None] * KK


def log_many(R: np.ndarray) -> np.ndarray:
    """Canonical axis-angle over a (..., 3, 3) stack of rotations."""
    R = np.asarray(R, dtype=float)
    flat = R.reshape(-1, 3, 3)
    trace = flat[:, 0, 0] + flat[:, 1, 1] + flat[:, 2, 2]
    cos_th = np.clip((trace - 1.0) / 2.0, -1.0, 1.0)
    s_vec = 0.5 * np.stack(
        [
            flat[:, 2, 1] - flat[:, 1, 2],
            flat[:, 0, 2] - flat[:, 2, 0],
            flat[:, 1, 0] - flat[:, 0, 1],
        ],
        axis=-1,
    )
    sin_th = np.linalg.norm(s_vec, axis=-1)
    th = np.arctan2(sin_th, cos_th)
    small = th < SMALL_ANGLE
    near_pi = th > np.pi - 1e-5
    general = ~(small | near_pi)
    out = np.zeros_like(s_vec)
    out[small] = 2.0 * s_vec[small] / (1.0 + cos_th[small])[:, None]
    if np.any(general):
        out[general] = (th[general] / sin_th[general])[:, None] * s_vec[general]
    for i in np.flatnonzero(near_pi):
        out[i] = log(flat[i], validate=False)
    return out.reshape(R.shape[:-2] + (3,))


def right_jacobian_many(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    th2 = np.einsum("...i,...i->...", a, a)
    th = np.sqrt(th2)
    small = th < SMALL_ANGLE
    th2_safe = np.where(small, 1.0, th2)
    th3_safe = th2_safe * np.where(small, 1.0, th)
    c1 = np.where(small, 0.5, (1.0 - np.cos(th)) / th2_safe)
    c2 = np.where(small, 1.0 / 6.0, (th - np.sin(th)) / th3_safe)
    K = hat_many(a)
    KK = K @ K
    return np.eye(3) - c1[..., None, None] * K + c2[..., None, None] * KK


def relative_angles(Ra: np.ndarray, Rb: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-pair geodesic angle and unit rotation axis of Ra^T Rb.

    Returns (psi, axis) with psi in [0, pi]; axis is the zero vector where
    psi is numerically zero (the direction is undefined there). Stable on
    both branches (identity and cut locus).
    """
    Q = np.einsum("...ji,...jk->...ik", Ra, Rb)
    r = log_many(Q)
    psi = np.linalg.norm(r, axis=-1)
    safe = np.where(psi > 0.0, psi, 1.0)
    axis = r / safe[..., None]
    axis[psi == 0.0] = 0.0
    return psi, axis
