"""Structure-based camera localization and camera-trajectory filtering.

The minimal solver recovers camera pose from three 2D-3D correspondences by
the direct quartic parametrization (intermediate camera/world frames, quartic
in cos(theta) solved via the companion matrix), returning all real solutions.
RANSAC draws 4-point samples (3 for the solver, 1 to disambiguate the up to
four solutions), counts reprojection inliers, and refines the best model on
its inliers with a nonlinear reprojection-error minimization.

Conventions: R_C is the camera-to-world rotation (the camera's orientation
in the scene frame) and t_C the camera center in scene coordinates, so a
world point P maps to camera coordinates as R_C^T (P - t_C).

Feature extraction and image retrieval are out of scope; correspondences
arrive precomputed via JSONL files (one object per query frame).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.optimize import least_squares

from . import rotations as rot

REAL_ROOT_TOL = 1e-9  # |Im| below which a companion-matrix root counts as real
DEFAULT_PX_THRESHOLD = 4.0  # non-published default, see config docs
DEFAULT_MAX_ITER = 1000  # non-published default
VELOCITY_EPS = 3.0  # m/s, outlier filter threshold


class DegenerateConfiguration(ValueError):
    """World points (or bearings) admit no unique minimal solution."""


class LocalizationError(ValueError):
    """Unrecoverable localization input (too few correspondences/inliers)."""


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")

    def bearings(self, pixels: np.ndarray) -> np.ndarray:
        """Unit view rays in the camera frame for (N, 2) pixel coordinates."""
        px = np.asarray(pixels, dtype=float).reshape(-1, 2)
        v = np.column_stack(
            [(px[:, 0] - self.cx) / self.fx, (px[:, 1] - self.cy) / self.fy, np.ones(len(px))]
        )
        return v / np.linalg.norm(v, axis=1, keepdims=True)

    def project(self, R_C: np.ndarray, t_C: np.ndarray, world: np.ndarray) -> np.ndarray:
        """Pixel coordinates of (N, 3) world points; rows with non-positive
        depth come back as +inf so they can never be inliers."""
        pc = (np.asarray(world, dtype=float).reshape(-1, 3) - t_C) @ R_C
        out = np.full((pc.shape[0], 2), np.inf)
        ok = pc[:, 2] > 1e-12
        out[ok, 0] = self.fx * pc[ok, 0] / pc[ok, 2] + self.cx
        out[ok, 1] = self.fy * pc[ok, 1] / pc[ok, 2] + self.cy
        return out


@dataclass
class CameraPoseEstimate:
    R_C: np.ndarray  # (3,3) camera-to-world
    t_C: np.ndarray  # (3,) camera center, meters
    timestamp: float = 0.0
    valid: bool = True


@dataclass
class CameraTrajectory:
    """Fixed-rate stream of camera pose estimates."""

    timestamps: np.ndarray  # (N,)
    valid: np.ndarray  # (N,) bool
    R: np.ndarray  # (N,3,3); identity where invalid
    t: np.ndarray  # (N,3); zeros where invalid

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype=float)
        self.valid = np.asarray(self.valid, dtype=bool)
        self.R = np.asarray(self.R, dtype=float)
        self.t = np.asarray(self.t, dtype=float)
        dt = np.diff(self.timestamps)
        if len(self.timestamps) >= 2:
            if np.any(dt <= 0):
                raise ValueError("trajectory timestamps must be strictly increasing")
            if np.abs(dt - dt[0]).max() > 1e-6:
                raise ValueError("trajectory timestamps must be uniformly spaced")

    @property
    def rate_hz(self) -> float:
        return 1.0 / float(self.timestamps[1] - self.timestamps[0])

    def __len__(self) -> int:
        return len(self.timestamps)

    def slice(self, start: int, stop: int) -> "CameraTrajectory":
        return CameraTrajectory(
            timestamps=self.timestamps[start:stop].copy(),
            valid=self.valid[start:stop].copy(),
            R=self.R[start:stop].copy(),
            t=self.t[start:stop].copy(),
        )


# ---------------------------------------------------------------------------
# Minimal solver
# ---------------------------------------------------------------------------


def p3p_solve(
    world: np.ndarray, bearings: np.ndarray
) -> list[tuple[np.ndarray, np.ndarray]]:
    """All camera poses consistent with 3 world points and 3 unit bearings.

    Returns up to four (R_C, t_C) pairs, each reprojecting the three points
    exactly on noiseless input. Raises DegenerateConfiguration for collinear
    or coincident world points and for coplanar bearing triples.
    """
    P = np.asarray(world, dtype=float).reshape(3, 3).copy()
    f = np.asarray(bearings, dtype=float).reshape(3, 3).copy()
    f = f / np.linalg.norm(f, axis=1, keepdims=True)

    span = np.cross(P[1] - P[0], P[2] - P[0])
    scale = max(np.linalg.norm(P[1] - P[0]), np.linalg.norm(P[2] - P[0]))
    if scale < 1e-12 or np.linalg.norm(span) < 1e-10 * scale * scale:
        raise DegenerateConfiguration("world points are collinear or coincident")

    # intermediate camera frame from f1, f2; swap features so the third
    # bearing has negative z there (keeps theta in the solvable half-space)
    def camera_frame(f1, f2):
        e1 = f1
        e3 = np.cross(f1, f2)
        n = np.linalg.norm(e3)
        if n < 1e-12:
            raise DegenerateConfiguration("first two bearings are parallel")
        e3 = e3 / n
        e2 = np.cross(e3, e1)
        return np.stack([e1, e2, e3])

    Tc = camera_frame(f[0], f[1])
    f3_t = Tc @ f[2]
    if abs(f3_t[2]) < 1e-12:
        raise DegenerateConfiguration("bearings are coplanar")
    if f3_t[2] > 0:
        f = f[[1, 0, 2]]
        P = P[[1, 0, 2]]
        Tc = camera_frame(f[0], f[1])
        f3_t = Tc @ f[2]

    # intermediate world frame from P1, P2, P3
    n1 = P[1] - P[0]
    d12 = np.linalg.norm(n1)
    n1 = n1 / d12
    n3 = np.cross(n1, P[2] - P[0])
    n3 = n3 / np.linalg.norm(n3)
    n2 = np.cross(n3, n1)
    N = np.stack([n1, n2, n3])
    P3_eta = N @ (P[2] - P[0])
    p1, p2 = P3_eta[0], P3_eta[1]

    cos_beta = float(f[0] @ f[1])
    sin2 = 1.0 - cos_beta * cos_beta
    if sin2 < 1e-15:
        raise DegenerateConfiguration("first two bearings are parallel")
    b = cos_beta / np.sqrt(sin2)  # cot(beta), sign of cos(beta)

    phi1 = f3_t[0] / f3_t[2]
    phi2 = f3_t[1] / f3_t[2]

    g1, g2 = phi1, phi2
    g1_2, g2_2 = g1 * g1, g2 * g2
    p1_2 = p1 * p1
    p1_3 = p1_2 * p1
    p1_4 = p1_3 * p1
    p2_2 = p2 * p2
    p2_3 = p2_2 * p2
    p2_4 = p2_3 * p2
    d12_2 = d12 * d12
    b_2 = b * b

    a4 = -g2_2 * p2_4 - g1_2 * p2_4 - p2_4
    a3 = 2 * p2_3 * d12 * b + 2 * g2_2 * p2_3 * d12 * b - 2 * g1 * g2 * p2_3 * d12
    a2 = (
        -g2_2 * p2_2 * p1_2
        - g2_2 * p2_2 * d12_2 * b_2
        - g2_2 * p2_2 * d12_2
        + g2_2 * p2_4
        + g1_2 * p2_4
        + 2 * p1 * p2_2 * d12
        + 2 * g1 * g2 * p1 * p2_2 * d12 * b
        - g1_2 * p1_2 * p2_2
        + 2 * g2_2 * p1 * p2_2 * d12
        - p2_2 * d12_2 * b_2
        - 2 * p1_2 * p2_2
    )
    a1 = (
        2 * p1_2 * p2 * d12 * b
        + 2 * g1 * g2 * p2_3 * d12
        - 2 * g2_2 * p2_3 * d12 * b
        - 2 * p1 * p2 * d12_2 * b
    )
    a0 = (
        -2 * g1 * g2 * p1 * p2_2 * d12 * b
        + g2_2 * p2_2 * d12_2
        + 2 * p1_3 * d12
        - p1_2 * d12_2
        + g2_2 * p1_2 * p2_2
        - p1_4
        - 2 * g2_2 * p1 * p2_2 * d12
        + g1_2 * p1_2 * p2_2
        + g2_2 * p2_2 * d12_2 * b_2
    )

    roots = np.roots([a4, a3, a2, a1, a0])  # companion-matrix eigenvalues
    solutions = []
    for r in roots:
        if abs(r.imag) > REAL_ROOT_TOL:
            continue
        cos_theta = float(np.clip(r.real, -1.0, 1.0))
        sin_theta = np.sqrt(max(0.0, 1.0 - cos_theta * cos_theta))
        denom = -g1 * cos_theta * p2 / g2 + p1 - d12
        numer = -g1 * p1 / g2 - cos_theta * p2 + d12 * b
        if abs(denom) < 1e-15:
            continue
        cot_alpha = numer / denom
        sin_alpha = np.sqrt(1.0 / (cot_alpha * cot_alpha + 1.0))
        cos_alpha = np.sqrt(1.0 - sin_alpha * sin_alpha)
        if cot_alpha < 0:
            cos_alpha = -cos_alpha
        base = sin_alpha * b + cos_alpha
        C_eta = np.array(
            [
                d12 * cos_alpha * base,
                cos_theta * d12 * sin_alpha * base,
                sin_theta * d12 * sin_alpha * base,
            ]
        )
        C = P[0] + N.T @ C_eta
        Qm = np.array(
            [
                [-cos_alpha, -sin_alpha * cos_theta, -sin_alpha * sin_theta],
                [sin_alpha, -cos_alpha * cos_theta, -cos_alpha * sin_theta],
                [0.0, -sin_theta, cos_theta],
            ]
        )
        R = N.T @ Qm.T @ Tc  # camera-to-world directly
        # the quartic squaring steps can introduce extraneous roots in
        # symmetric configurations; keep only candidates that actually
        # reproduce the three bearings (genuine roots land at ~1e-10 rad)
        rays = (P - C) @ R
        norms = np.linalg.norm(rays, axis=1)
        if np.any(norms < 1e-12):
            continue
        cos_err = np.einsum("ij,ij->i", rays / norms[:, None], f)
        if np.min(cos_err) < 1.0 - 1e-9:
            continue
        solutions.append((R, C))
    return solutions


def p3p_solve_pixels(
    correspondences: np.ndarray, world: np.ndarray, K: CameraIntrinsics
) -> list[CameraPoseEstimate]:
    """Pixel-space wrapper over :func:`p3p_solve`."""
    bearings = K.bearings(correspondences)
    return [
        CameraPoseEstimate(R_C=R, t_C=t)
        for R, t in p3p_solve(world, bearings)
    ]


# ---------------------------------------------------------------------------
# RANSAC with local optimization
# ---------------------------------------------------------------------------


def _refine_pose(
    R: np.ndarray, C: np.ndarray, pixels: np.ndarray, world: np.ndarray, K: CameraIntrinsics
) -> tuple[np.ndarray, np.ndarray]:
    """Nonlinear reprojection-error refinement (rotation vector + center)."""

    def residuals(x):
        Rx = rot.exp(x[:3])
        return (K.project(Rx, x[3:], world) - pixels).ravel()

    x0 = np.concatenate([rot.log(R, validate=False), C])
    res = least_squares(residuals, x0, method="lm", max_nfev=200)
    return rot.exp(res.x[:3]), res.x[3:]


def ransac_localize(
    pixels: np.ndarray,
    world: np.ndarray,
    K: CameraIntrinsics,
    px_threshold: float = DEFAULT_PX_THRESHOLD,
    max_iter: int = DEFAULT_MAX_ITER,
    seed: int = 0,
    timestamp: float = 0.0,
) -> tuple[CameraPoseEstimate, np.ndarray]:
    """Robust pose from 2D-3D matches; deterministic given the seed.

    Minimal samples of 4: three points feed the solver, the fourth picks
    among its solutions. The best-inlier-count model (ties: earliest
    iteration) is refined on its inliers; the refinement is kept only if it
    does not lose inliers. With no model reaching 4 inliers the estimate
    comes back with valid=False and an all-false mask.
    """
    pixels = np.asarray(pixels, dtype=float).reshape(-1, 2)
    world = np.asarray(world, dtype=float).reshape(-1, 3)
    n = pixels.shape[0]
    if n < 4:
        raise LocalizationError(f"need at least 4 correspondences, got {n}")
    rng = np.random.default_rng(seed)
    best_count = 0
    best_model: tuple[np.ndarray, np.ndarray] | None = None
    for _ in range(max_iter):
        idx = rng.choice(n, size=4, replace=False)
        try:
            sols = p3p_solve(world[idx[:3]], K.bearings(pixels[idx[:3]]))
        except DegenerateConfiguration:
            continue
        if not sols:
            continue
        errs4 = [
            np.linalg.norm(K.project(R, C, world[idx[3:4]])[0] - pixels[idx[3]])
            for R, C in sols
        ]
        R, C = sols[int(np.argmin(errs4))]
        err = np.linalg.norm(K.project(R, C, world) - pixels, axis=1)
        count = int(np.sum(err <= px_threshold))
        if count > best_count:
            best_count = count
            best_model = (R, C)
    if best_model is None or best_count < 4:
        return (
            CameraPoseEstimate(R_C=np.eye(3), t_C=np.zeros(3), timestamp=timestamp, valid=False),
            np.zeros(n, dtype=bool),
        )
    R, C = best_model
    err = np.linalg.norm(K.project(R, C, world) - pixels, axis=1)
    mask = err <= px_threshold
    R_ref, C_ref = _refine_pose(R, C, pixels[mask], world[mask], K)
    err_ref = np.linalg.norm(K.project(R_ref, C_ref, world) - pixels, axis=1)
    mask_ref = err_ref <= px_threshold
    if mask_ref.sum() >= mask.sum():
        R, C, mask = R_ref, C_ref, mask_ref
    return CameraPoseEstimate(R_C=R, t_C=C, timestamp=timestamp, valid=True), mask


# ---------------------------------------------------------------------------
# Trajectory outlier filter
# ---------------------------------------------------------------------------


def _neighbor_velocity(
    t: np.ndarray, inlier: np.ndarray, j: int, rate: float
) -> float | None:
    """Max translation speed from frame j to its nearest inlier neighbors,
    normalized by the frame gap. None if no inlier neighbor exists."""
    speeds = []
    prev = j - 1
    while prev >= 0 and not inlier[prev]:
        prev -= 1
    if prev >= 0:
        gap = j - prev
        speeds.append(np.linalg.norm(t[j] - t[prev]) * rate / gap)
    nxt = j + 1
    n = len(inlier)
    while nxt < n and not inlier[nxt]:
        nxt += 1
    if nxt < n:
        gap = nxt - j
        speeds.append(np.linalg.norm(t[j] - t[nxt]) * rate / gap)
    if not speeds:
        return None
    return float(max(speeds))


def trajectory_velocity(traj: CameraTrajectory, j: int) -> float:
    """Translation speed of frame j against its nearest valid neighbors
    (max over the two sides), in m/s."""
    inlier = traj.valid.copy()
    inlier[j] = False  # neighbors exclude the frame itself
    v = _neighbor_velocity(traj.t, inlier, j, traj.rate_hz)
    if v is None:
        raise LocalizationError(f"frame {j} has no valid neighbor")
    return v


def filter_outliers(
    traj: CameraTrajectory, eps: float = VELOCITY_EPS
) -> CameraTrajectory:
    """Velocity-based outlier rejection with interpolation of the holes.

    Every sweep relabels all originally-valid frames against the current
    inlier set: a frame whose neighbor velocity exceeds eps becomes an
    outlier, one that no longer exceeds it is reinstated. At the fixed
    point, outliers and invalid frames are replaced by linear interpolation
    between surrounding inliers (constant-speed geodesic interpolation for
    orientation); leading/trailing gaps hold the nearest inlier. The output
    marks every frame valid; inlier frames are bit-identical to the input.
    """
    n = len(traj)
    rate = traj.rate_hz
    usable = traj.valid.copy()
    if usable.sum() < 2:
        raise LocalizationError("fewer than 2 valid estimates; trajectory unrecoverable")
    inlier = usable.copy()
    max_sweeps = 2 * n + 10
    for _ in range(max_sweeps):
        new_inlier = np.zeros(n, dtype=bool)
        for j in range(n):
            if not usable[j]:
                continue
            others = inlier.copy()
            others[j] = False
            v = _neighbor_velocity(traj.t, others, j, rate)
            new_inlier[j] = v is None or v <= eps
        if np.array_equal(new_inlier, inlier):
            break
        inlier = new_inlier
    if inlier.sum() < 2:
        raise LocalizationError("fewer than 2 inliers survive; trajectory unrecoverable")

    out_R = traj.R.copy()
    out_t = traj.t.copy()
    idx = np.flatnonzero(inlier)
    first, last = idx[0], idx[-1]
    for j in range(n):
        if inlier[j]:
            continue
        if j < first:
            out_R[j] = traj.R[first]
            out_t[j] = traj.t[first]
        elif j > last:
            out_R[j] = traj.R[last]
            out_t[j] = traj.t[last]
        else:
            a = idx[np.searchsorted(idx, j) - 1]
            b = idx[np.searchsorted(idx, j)]
            w = (j - a) / (b - a)
            out_t[j] = (1 - w) * traj.t[a] + w * traj.t[b]
            rel = rot.log(traj.R[a].T @ traj.R[b], validate=False)
            out_R[j] = traj.R[a] @ rot.exp(w * rel)
    return CameraTrajectory(
        timestamps=traj.timestamps.copy(),
        valid=np.ones(n, dtype=bool),
        R=out_R,
        t=out_t,
    )


# ---------------------------------------------------------------------------
# File formats
# ---------------------------------------------------------------------------


def load_intrinsics(path: str | Path) -> CameraIntrinsics:
    path = Path(path)
    if not path.exists():
        raise LocalizationError(f"intrinsics file not found: {path}")
    with open(path) as fh:
        doc = json.load(fh)
    try:
        return CameraIntrinsics(
            fx=float(doc["fx"]), fy=float(doc["fy"]), cx=float(doc["cx"]), cy=float(doc["cy"])
        )
    except KeyError as e:
        raise LocalizationError(f"{path}: missing intrinsics field {e}") from e


def load_matches(path: str | Path) -> list[dict]:
    """Correspondence JSONL: {timestamp, pixels: [[u,v]...], world: [[x,y,z]...]}."""
    path = Path(path)
    if not path.exists():
        raise LocalizationError(f"matches file not found: {path}")
    frames = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                frames.append(
                    {
                        "timestamp": float(obj["timestamp"]),
                        "pixels": np.asarray(obj["pixels"], dtype=float).reshape(-1, 2),
                        "world": np.asarray(obj["world"], dtype=float).reshape(-1, 3),
                    }
                )
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
                raise LocalizationError(f"{path}:{lineno}: bad match record: {e}") from e
            if frames[-1]["pixels"].shape[0] != frames[-1]["world"].shape[0]:
                raise LocalizationError(
                    f"{path}:{lineno}: pixels and world counts differ"
                )
    return frames


def save_trajectory(traj: CameraTrajectory, path: str | Path) -> None:
    """Trajectory JSONL: {timestamp, valid, q (wxyz), t}."""
    with open(path, "w") as fh:
        for i in range(len(traj)):
            fh.write(
                json.dumps(
                    {
                        "timestamp": float(traj.timestamps[i]),
                        "valid": bool(traj.valid[i]),
                        "q": rot.to_quat_wxyz(traj.R[i]).tolist(),
                        "t": traj.t[i].tolist(),
                    }
                )
                + "\n"
            )


def load_trajectory(path: str | Path) -> CameraTrajectory:
    path = Path(path)
    if not path.exists():
        raise LocalizationError(f"trajectory file not found: {path}")
    ts, valid, Rs, t = [], [], [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                ts.append(float(obj["timestamp"]))
                valid.append(bool(obj["valid"]))
                Rs.append(rot.from_quat_wxyz(np.asarray(obj["q"], dtype=float)))
                t.append(np.asarray(obj["t"], dtype=float))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
                raise LocalizationError(f"{path}:{lineno}: bad trajectory record: {e}") from e
    return CameraTrajectory(
        timestamps=np.asarray(ts), valid=np.asarray(valid), R=np.stack(Rs), t=np.stack(t)
    )
