"""Registering the IMU stream to the scene frame, and the trajectory-tangent
heading correction used to seed the joint optimization.

Scenes are z-up: the frame alignment is a pure yaw (rotation about the scene
z-axis), solved in closed form from the frame-0 head and camera orientations.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import rotations as rot
from .body import Skeleton, head_orientation
from .sequence import Sequence

# Paper-faithful tangent offset (frames).
DEFAULT_TANGENT_GAP = 10

# Displacement over the tangent gap below which a frame counts as stationary.
STATIONARY_THRESHOLD = 0.01  # meters


class HeadingError(ValueError):
    """Raised when the heading correction is ambiguous (anti-parallel tangents)."""


@dataclass(frozen=True)
class AlignmentResult:
    R_A_star: np.ndarray  # planar (z-axis) rotation
    residual: float  # radians


@dataclass
class TangentField:
    tangents: np.ndarray  # (N, 3) unit vectors; zero rows where stationary
    stationary: np.ndarray  # (N,) bool
    gamma: int


def align_frames(theta0_imu: np.ndarray, R_cam0: np.ndarray, sk: Skeleton) -> AlignmentResult:
    """Best yaw-only rotation taking the frame-0 head orientation to the
    frame-0 camera orientation.

    With M = R_cam0 @ R_head^T, the geodesic distance d(rot_z(x) @ R_head,
    R_cam0) = d(rot_z(x), M) is minimized by the z-twist of M:
    x* = atan2(M10 - M01, M00 + M11). The residual is the leftover swing.
    """
    R_head = head_orientation(sk, theta0_imu)
    R_cam0 = np.asarray(R_cam0, dtype=float)
    M = R_cam0 @ R_head.T
    x_star = float(np.arctan2(M[1, 0] - M[0, 1], M[0, 0] + M[1, 1]))
    R_A = rot.rot_z(x_star)
    residual = rot.geodesic_distance(R_A @ R_head, R_cam0, validate=False)
    return AlignmentResult(R_A_star=R_A, residual=residual)


def apply_alignment(seq: Sequence, R_A: np.ndarray) -> Sequence:
    """Rotate the IMU stream into the scene frame.

    Every frame's root axis-angle is premultiplied by R_A on the rotation
    level and every IMU translation is rotated; the 23 articulation triples
    (and any camera estimates) are untouched bit-exactly.
    """
    R_A = np.asarray(R_A, dtype=float)
    out = seq.copy()
    if np.array_equal(R_A, np.eye(3)):
        return out
    roots = rot.exp_many(seq.theta_imu[:, :3])
    new_roots = rot.log_many(np.einsum("ij,njk->nik", R_A, roots))
    out.theta_imu[:, :3] = new_roots
    out.t_imu = seq.t_imu @ R_A.T
    return out


def trajectory_tangents(
    translations: np.ndarray,
    gamma: int = DEFAULT_TANGENT_GAP,
    motion_threshold: float = STATIONARY_THRESHOLD,
) -> TangentField:
    """Unit forward-difference travel directions at a gamma-frame offset.

    Frames whose displacement over the window stays below motion_threshold
    are flagged stationary (zero tangent). The trailing gamma frames reuse
    the last computable entry.
    """
    t = np.asarray(translations, dtype=float)
    n = t.shape[0]
    if n <= gamma:
        raise ValueError(f"need more than gamma={gamma} frames, got {n}")
    diffs = t[gamma:] - t[:-gamma]
    norms = np.linalg.norm(diffs, axis=1)
    stationary = np.zeros(n, dtype=bool)
    tangents = np.zeros((n, 3))
    m = n - gamma
    moving = norms >= motion_threshold
    stationary[:m] = ~moving
    tangents[:m][moving] = diffs[moving] / norms[moving][:, None]
    tangents[m:] = tangents[m - 1]
    stationary[m:] = stationary[m - 1]
    return TangentField(tangents=tangents, stationary=stationary, gamma=gamma)


def heading_correction(
    theta_imu_j: np.ndarray,
    v_imu: np.ndarray,
    v_cam: np.ndarray,
    exact: bool = True,
) -> np.ndarray:
    """Rotate the root triple so the IMU travel direction matches the camera's.

    The correction rotation aligns v_imu with v_cam about their common
    normal. ``exact=True`` (default) uses the true angle
    atan2(|v_imu x v_cam|, v_imu . v_cam); ``exact=False`` uses the raw
    cross product as the rotation vector, whose magnitude is the sine of
    that angle (kept for comparison; the two agree to first order).

    Anti-parallel tangents leave the rotation plane undefined and raise
    HeadingError. Parallel tangents return the pose unchanged.
    """
    theta = np.asarray(theta_imu_j, dtype=float).reshape(72).copy()
    v_i = np.asarray(v_imu, dtype=float)
    v_c = np.asarray(v_cam, dtype=float)
    cross = np.cross(v_i, v_c)
    sin_angle = np.linalg.norm(cross)
    cos_angle = float(v_i @ v_c)
    if sin_angle < 1e-12:
        if cos_angle < 0.0:
            raise HeadingError("anti-parallel tangents: heading correction is ambiguous")
        return theta
    if exact:
        corr = rot.exp(cross / sin_angle * np.arctan2(sin_angle, cos_angle))
    else:
        corr = rot.exp(cross)
    theta[:3] = rot.log(corr @ rot.exp(theta[:3]), validate=False)
    return theta


def correction_rotation(v_imu: np.ndarray, v_cam: np.ndarray, exact: bool = True) -> np.ndarray:
    """The alignment rotation used by heading_correction, as a matrix.

    Raises HeadingError for anti-parallel tangents.
    """
    v_i = np.asarray(v_imu, dtype=float)
    v_c = np.asarray(v_cam, dtype=float)
    cross = np.cross(v_i, v_c)
    sin_angle = np.linalg.norm(cross)
    cos_angle = float(v_i @ v_c)
    if sin_angle < 1e-12:
        if cos_angle < 0.0:
            raise HeadingError("anti-parallel tangents: heading correction is ambiguous")
        return np.eye(3)
    if exact:
        return rot.exp(cross / sin_angle * np.arctan2(sin_angle, cos_angle))
    return rot.exp(cross)


def _planar_tangent(v: np.ndarray) -> np.ndarray | None:
    """Horizontal unit projection of a tangent; None if nearly vertical."""
    h = np.array([v[0], v[1], 0.0])
    n = np.linalg.norm(h)
    if n < 0.3:
        return None
    return h / n


def heading_corrections_for_sequence(
    imu_tangents: TangentField,
    cam_tangents: TangentField,
    exact: bool = True,
) -> np.ndarray:
    """Per-frame correction rotations (N, 3, 3), carrying the last usable one.

    The correction is planar: tangents are projected onto the horizontal
    plane before alignment, so vertical trajectory noise (head bob, camera
    z jitter) cannot tip the body. Stationary frames (either field) reuse
    the correction of the last frame with usable motion, as do frames whose
    tangents are anti-parallel or nearly vertical; leading stationary
    frames get the identity.
    """
    n = imu_tangents.tangents.shape[0]
    out = np.empty((n, 3, 3))
    last = np.eye(3)
    for j in range(n):
        if not (imu_tangents.stationary[j] or cam_tangents.stationary[j]):
            v_i = _planar_tangent(imu_tangents.tangents[j])
            v_c = _planar_tangent(cam_tangents.tangents[j])
            if v_i is not None and v_c is not None:
                try:
                    last = correction_rotation(v_i, v_c, exact=exact)
                except HeadingError:
                    pass  # keep carrying the previous correction
        out[j] = last
    return out
