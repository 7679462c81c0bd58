"""Synthetic ground-truth generator: parametric walking/standing sequences
with exact foot plants, plus IMU drift and camera noise/outlier/dropout
corruption models.

The gait machinery produces analytically planted feet: during a stance
phase the ankle sits at a fixed world anchor with a fixed flat orientation,
solved per frame by closed-form two-bone leg IK, so contact markers are
bit-frozen and the slide/contact energies vanish at ground truth. The
footprint marker positions are appended to the scene cloud, making the
nearest-point contact term exactly zero on clean data.

Corruption draws come from two independent seeded streams (IMU and camera),
so enabling only one corruption family leaves the other data bit-identical
to the clean sequence.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import rotations as rot
from .body import BodyPose, Skeleton, forward_kinematics, load_skeleton, markers_batch
from .scene import ScenePointCloud
from .sequence import Sequence


class SimError(ValueError):
    pass


@dataclass
class PathSpec:
    type: str = "line"  # line | circle | waypoints
    speed: float = 0.9  # m/s; 0 = standing
    direction: tuple[float, float] = (1.0, 0.0)  # line heading (xy)
    radius: float = 8.0  # circle radius, meters
    start_angle: float = 0.0  # circle start, radians
    waypoints: list[tuple[float, float]] = field(default_factory=list)


@dataclass
class GaitSpec:
    step_period: float = 0.5  # seconds per step (cycle = 2 steps)
    clearance: float = 0.05  # swing foot lift, meters
    duty: float = 0.6  # stance fraction of the cycle; > 0.5 keeps double support


@dataclass
class ImuCorruption:
    yaw_drift: float = 0.0  # rad/s cumulative heading error
    trans_drift: float = 0.0  # m/s cumulative position error
    articulation_noise: float = 0.0  # rad, white, non-root entries
    frame_yaw_offset: float = 0.0  # rad, constant IMU-to-scene yaw mismatch


@dataclass
class CameraCorruption:
    pos_noise: float = 0.0  # m, per-axis sigma
    rot_noise: float = 0.0  # rad, per-axis sigma
    outlier_rate: float = 0.0
    outlier_mag: float = 5.0  # m
    dropout_rate: float = 0.0


@dataclass
class SceneSpec:
    extent: float = 20.0  # meters, square plane
    spacing: float = 0.02  # meters between grid points


@dataclass
class SimSpec:
    path: PathSpec = field(default_factory=PathSpec)
    duration: float = 20.0  # seconds
    rate_hz: float = 30.0
    gait: GaitSpec = field(default_factory=GaitSpec)
    imu: ImuCorruption = field(default_factory=ImuCorruption)
    camera: CameraCorruption = field(default_factory=CameraCorruption)
    scene: SceneSpec = field(default_factory=SceneSpec)
    seed: int = 0

    def __post_init__(self):
        if self.rate_hz <= 0 or self.duration <= 0:
            raise SimError("duration and rate_hz must be positive")
        for name in ("outlier_rate", "dropout_rate"):
            v = getattr(self.camera, name)
            if not 0.0 <= v <= 1.0:
                raise SimError(f"camera.{name} must be in [0, 1]")
        if self.path.type not in ("line", "circle", "waypoints"):
            raise SimError(f"unknown path type {self.path.type!r}")
        if self.path.type == "waypoints" and len(self.path.waypoints) < 2:
            raise SimError("waypoints path needs at least 2 points")


@dataclass
class SimBundle:
    clean: Sequence
    corrupted: Sequence
    scene: ScenePointCloud


def load_spec(path: str | Path) -> SimSpec:
    with open(path) as fh:
        doc = json.load(fh)
    return spec_from_dict(doc)


def spec_from_dict(doc: dict) -> SimSpec:
    kwargs = dict(doc)
    for key, cls in (
        ("path", PathSpec),
        ("gait", GaitSpec),
        ("imu", ImuCorruption),
        ("camera", CameraCorruption),
        ("scene", SceneSpec),
    ):
        if key in kwargs:
            sub = dict(kwargs[key])
            if key == "path" and "direction" in sub:
                sub["direction"] = tuple(sub["direction"])
            if key == "path" and "waypoints" in sub:
                sub["waypoints"] = [tuple(w) for w in sub["waypoints"]]
            kwargs[key] = cls(**sub)
    return SimSpec(**kwargs)


def save_spec(spec: SimSpec, path: str | Path) -> None:
    with open(path, "w") as fh:
        json.dump(asdict(spec), fh, indent=2)


# ---------------------------------------------------------------------------
# Path parametrization
# ---------------------------------------------------------------------------


class _Path:
    """Position p(t) on the ground plane and heading yaw(t), for all t
    (extrapolated beyond the nominal duration for gait anchor lookups)."""

    def __init__(self, spec: SimSpec):
        self.spec = spec
        p = spec.path
        if p.type == "waypoints":
            pts = np.asarray(p.waypoints, dtype=float)
            seg = np.diff(pts, axis=0)
            lengths = np.linalg.norm(seg, axis=1)
            if np.any(lengths <= 0):
                raise SimError("waypoints must be distinct")
            self._pts = pts
            self._cum = np.concatenate([[0.0], np.cumsum(lengths)])
            self._yaw = np.arctan2(seg[:, 1], seg[:, 0])

    def position_yaw(self, t: float) -> tuple[np.ndarray, float]:
        p = self.spec.path
        v = p.speed
        if v == 0.0:
            if p.type == "circle":
                ang = p.start_angle
                pos = np.array([p.radius * np.cos(ang), p.radius * np.sin(ang), 0.0])
                return pos, ang + np.pi / 2
            return np.zeros(3), (
                float(np.arctan2(p.direction[1], p.direction[0]))
                if p.type == "line"
                else 0.0
            )
        if p.type == "line":
            d = np.array([p.direction[0], p.direction[1]], dtype=float)
            d /= np.linalg.norm(d)
            yaw = float(np.arctan2(d[1], d[0]))
            return np.array([d[0] * v * t, d[1] * v * t, 0.0]), yaw
        if p.type == "circle":
            omega = v / p.radius
            ang = p.start_angle + omega * t
            pos = np.array([p.radius * np.cos(ang), p.radius * np.sin(ang), 0.0])
            return pos, float(ang + np.pi / 2)
        # waypoints: clamp arclength to the polyline
        s = np.clip(v * t, 0.0, self._cum[-1])
        i = int(np.clip(np.searchsorted(self._cum, s, side="right") - 1, 0, len(self._yaw) - 1))
        f = (s - self._cum[i]) / (self._cum[i + 1] - self._cum[i])
        xy = (1 - f) * self._pts[i] + f * self._pts[i + 1]
        return np.array([xy[0], xy[1], 0.0]), float(self._yaw[i])


# ---------------------------------------------------------------------------
# Leg inverse kinematics
# ---------------------------------------------------------------------------


def _rotation_between(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Minimal rotation taking unit vector a to unit vector b."""
    c = np.cross(a, b)
    s = np.linalg.norm(c)
    d = float(a @ b)
    if s < 1e-12:
        if d > 0:
            return np.eye(3)
        # opposite: rotate pi about any axis perpendicular to a
        perp = np.cross(a, [1.0, 0.0, 0.0])
        if np.linalg.norm(perp) < 1e-6:
            perp = np.cross(a, [0.0, 1.0, 0.0])
        perp /= np.linalg.norm(perp)
        return rot.exp(perp * np.pi)
    return rot.exp(c / s * np.arctan2(s, d))


class _LegIK:
    """Closed-form hip/knee/ankle solution for one leg of the skeleton."""

    def __init__(self, sk: Skeleton, side: str):
        names = list(sk.names)
        self.hip = names.index(f"{side}_hip")
        self.knee = names.index(f"{side}_knee")
        self.ankle = names.index(f"{side}_ankle")
        self.h0 = sk.scale * sk.offsets[self.hip]
        self.L1 = sk.scale * float(np.linalg.norm(sk.offsets[self.knee]))
        self.L2 = sk.scale * float(np.linalg.norm(sk.offsets[self.ankle]))

    def solve(
        self,
        R_root: np.ndarray,
        p_root: np.ndarray,
        ankle_world: np.ndarray,
        foot_yaw: float,
        clamp: bool = False,
    ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Local hip/knee/ankle axis-angles placing the ankle at the target
        with a flat, yaw-only world foot orientation.

        ``clamp`` pulls an out-of-reach target onto the reachable sphere;
        used for swing phases only (stance must stay exact and raises).
        """
        q = R_root.T @ (ankle_world - p_root)
        d = q - self.h0
        r = float(np.linalg.norm(d))
        if r > self.L1 + self.L2 - 1e-9:
            if not clamp:
                raise SimError(
                    "gait target beyond leg reach; lower speed or shorten step_period"
                )
            d = d * (self.L1 + self.L2 - 1e-9) / r
            r = self.L1 + self.L2 - 1e-9
        r = max(r, abs(self.L1 - self.L2) + 1e-9)
        dhat = d / r
        fwd = np.array([1.0, 0.0, 0.0])
        c = fwd - (fwd @ dhat) * dhat
        cn = np.linalg.norm(c)
        if cn < 1e-9:
            c = np.array([0.0, 0.0, 1.0]) - dhat[2] * dhat
            cn = np.linalg.norm(c)
        chat = c / cn
        cos_a = (self.L1**2 + r**2 - self.L2**2) / (2 * self.L1 * r)
        cos_a = float(np.clip(cos_a, -1.0, 1.0))
        sin_a = np.sqrt(1.0 - cos_a * cos_a)
        u1 = cos_a * dhat + sin_a * chat  # thigh direction, knee bulges forward
        u2 = (d - self.L1 * u1) / self.L2
        down = np.array([0.0, 0.0, -1.0])
        R_hip = _rotation_between(down, u1)
        R_knee = _rotation_between(down, R_hip.T @ u2)
        R_leg = R_root @ R_hip @ R_knee
        R_ankle = R_leg.T @ rot.rot_z(foot_yaw)
        return (
            rot.log(R_hip, validate=False),
            rot.log(R_knee, validate=False),
            rot.log(R_ankle, validate=False),
        )


# ---------------------------------------------------------------------------
# Generation
# ---------------------------------------------------------------------------

CONTACT_HEIGHT_TOL = 1e-3  # m: part height below this counts as grounded
CONTACT_SPEED_TOL = 1e-2  # m/frame: horizontal displacement below this


def _standing_heights(sk: Skeleton) -> tuple[float, float]:
    """(standing pelvis height, walking pelvis height) for this skeleton."""
    pose = BodyPose(theta=np.zeros(72), trans=np.zeros(3))
    tf = forward_kinematics(sk, pose)
    joints, locals_, _, _ = sk.flat_markers()
    z = (tf.positions[joints] + np.einsum("mij,mj->mi", tf.rotations[joints], sk.scale * locals_))[
        :, 2
    ]
    stand = -float(z.min())
    return stand, stand - 0.06 * sk.scale


def _ankle_rest_height(sk: Skeleton, side: str) -> float:
    names = list(sk.names)
    ankle = names.index(f"{side}_ankle")
    pose = BodyPose(theta=np.zeros(72), trans=np.zeros(3))
    tf = forward_kinematics(sk, pose)
    stand, _ = _standing_heights(sk)
    return float(tf.positions[ankle][2]) + stand


def generate(spec: SimSpec, sk: Skeleton | None = None) -> SimBundle:
    """Deterministic synthetic bundle: clean sequence, corrupted sequence,
    and the scene cloud (plane grid plus exact footprint points)."""
    if sk is None:
        sk = load_skeleton()
    n = int(round(spec.duration * spec.rate_hz))
    if n < 2:
        raise SimError("duration too short for the sample rate")
    rate = spec.rate_hz
    ts = np.arange(n) / rate
    path = _Path(spec)
    standing = spec.path.speed == 0.0
    pelvis_stand, pelvis_walk = _standing_heights(sk)

    theta = np.zeros((n, 72))
    trans = np.zeros((n, 3))
    if standing:
        pos0, yaw0 = path.position_yaw(0.0)
        for j in range(n):
            theta[j, :3] = [0.0, 0.0, yaw0]
            trans[j] = pos0 + [0.0, 0.0, pelvis_stand]
        # canonicalize the root triple through the rotation level
        theta[:, :3] = rot.log_many(rot.exp_many(theta[:, :3]))
    else:
        legs = {side: _LegIK(sk, side) for side in ("left", "right")}
        ankle_rest = {side: _ankle_rest_height(sk, side) for side in ("left", "right")}
        lateral = {side: sk.scale * sk.offsets[legs[side].hip][1] for side in ("left", "right")}
        cycle = 2.0 * spec.gait.step_period
        duty = spec.gait.duty
        offsets = {"left": 0.0, "right": 0.5 * cycle}

        def anchor(side: str, k: int) -> tuple[np.ndarray, float]:
            t_mid = offsets[side] + k * cycle + 0.5 * duty * cycle
            pos, yaw = path.position_yaw(t_mid)
            lat = lateral[side]
            a = pos + rot.rot_z(yaw) @ np.array([0.0, lat, 0.0])
            return np.array([a[0], a[1], ankle_rest[side]]), yaw

        for j in range(n):
            t = ts[j]
            p_xy, yaw = path.position_yaw(t)
            R_root = rot.rot_z(yaw)
            p_root = p_xy + np.array([0.0, 0.0, pelvis_walk])
            theta[j, :3] = rot.log(R_root, validate=False)
            trans[j] = p_root
            for side in ("left", "right"):
                k = int(np.floor((t - offsets[side]) / cycle))
                tau = (t - offsets[side]) - k * cycle
                in_stance = tau < duty * cycle
                if in_stance:
                    ankle_w, foot_yaw = anchor(side, k)
                else:
                    a0, y0 = anchor(side, k)
                    a1, y1 = anchor(side, k + 1)
                    s = (tau - duty * cycle) / ((1.0 - duty) * cycle)
                    sm = s * s * (3.0 - 2.0 * s)  # smoothstep
                    ankle_w = (1 - sm) * a0 + sm * a1
                    ankle_w[2] += spec.gait.clearance * np.sin(np.pi * s)
                    dy = (y1 - y0 + np.pi) % (2 * np.pi) - np.pi
                    foot_yaw = y0 + sm * dy
                ik = legs[side]
                a_hip, a_knee, a_ankle = ik.solve(
                    R_root, p_root, ankle_w, foot_yaw, clamp=not in_stance
                )
                theta[j, 3 * ik.hip : 3 * ik.hip + 3] = a_hip
                theta[j, 3 * ik.knee : 3 * ik.knee + 3] = a_knee
                theta[j, 3 * ik.ankle : 3 * ik.ankle + 3] = a_ankle

    # contact flags from the generated marker kinematics
    markers = markers_batch(sk, theta, trans)
    contacts = _contact_flags(markers)

    # exact camera: rigidly attached to the head (identity head-camera offset)
    from .body import forward_kinematics_batch

    W, X = forward_kinematics_batch(sk, theta, trans)
    head = int(sk.head_chain[-1])
    cam_R = W[:, head].copy()
    cam_t = X[:, head].copy()

    clean = Sequence(
        timestamps=ts.copy(),
        theta_imu=theta.copy(),
        t_imu=trans.copy(),
        contacts=contacts.copy(),
        cam_valid=np.ones(n, dtype=bool),
        cam_R=cam_R.copy(),
        cam_t=cam_t.copy(),
        rate_hz=rate,
        scale=sk.scale,
    )

    corrupted = _corrupt(clean, spec)

    # scene: plane grid plus the exact footprint points touched in contact
    half = spec.scene.extent / 2.0
    m = int(round(spec.scene.extent / spec.scene.spacing)) + 1
    xs = -half + spec.scene.spacing * np.arange(m)
    gx, gy = np.meshgrid(xs, xs, indexing="ij")
    grid = np.column_stack([gx.ravel(), gy.ravel(), np.zeros(gx.size)])
    flat_contact = contacts[:, _marker_parts(sk)]  # (n, M)
    touched = markers[flat_contact]
    if touched.size:
        touched = np.unique(touched, axis=0)
        pts = np.concatenate([grid, touched], axis=0)
    else:
        pts = grid
    scene = ScenePointCloud(points=pts)
    return SimBundle(clean=clean, corrupted=corrupted, scene=scene)


def _marker_parts(sk: Skeleton) -> np.ndarray:
    return sk.flat_markers()[2]


def _contact_flags(markers: np.ndarray) -> np.ndarray:
    """Per-frame part flags: mean part height < 1 mm above the plane and
    horizontal part speed < 1 cm per frame (backward difference)."""
    n = markers.shape[0]
    per_part = markers.reshape(n, 4, -1, 3).mean(axis=2)  # (n, 4, 3)
    height_ok = per_part[:, :, 2] < CONTACT_HEIGHT_TOL
    speed = np.zeros((n, 4))
    d = per_part[1:, :, :2] - per_part[:-1, :, :2]
    speed[1:] = np.linalg.norm(d, axis=2)
    return height_ok & (speed < CONTACT_SPEED_TOL)


def contact_schedule(spec: SimSpec, sk: Skeleton | None = None) -> np.ndarray:
    """The clean sequence's per-frame contact flags (4 per frame)."""
    return generate(spec, sk).clean.contacts


def _corrupt(clean: Sequence, spec: SimSpec) -> Sequence:
    out = clean.copy()
    n = len(clean)
    imu = spec.imu
    cam = spec.camera
    rng_imu = np.random.default_rng([spec.seed, 0xA11CE])
    rng_cam = np.random.default_rng([spec.seed, 0xCAFE])

    if (
        imu.yaw_drift != 0.0
        or imu.trans_drift != 0.0
        or imu.articulation_noise != 0.0
        or imu.frame_yaw_offset != 0.0
    ):
        t_axis = np.arange(n) / clean.rate_hz
        drift_dir = rng_imu.normal(size=3)
        drift_dir[2] *= 0.2  # drift mostly horizontal
        drift_dir /= np.linalg.norm(drift_dir)
        yaw = imu.frame_yaw_offset + imu.yaw_drift * t_axis
        roots = rot.exp_many(clean.theta_imu[:, :3])
        Rz = rot.exp_many(np.column_stack([np.zeros(n), np.zeros(n), yaw]))
        out.theta_imu[:, :3] = rot.log_many(np.einsum("nij,njk->nik", Rz, roots))
        t0 = clean.t_imu[0]
        rel = clean.t_imu - t0
        spun = np.einsum("nij,nj->ni", Rz, rel)
        drift = np.outer(imu.trans_drift * t_axis, drift_dir)
        frame_R = rot.rot_z(imu.frame_yaw_offset)
        out.t_imu = (frame_R @ t0) + spun + drift
        if imu.articulation_noise > 0.0:
            noise = rng_imu.normal(size=(n, 69)) * imu.articulation_noise
            out.theta_imu[:, 3:] = clean.theta_imu[:, 3:] + noise

    if (
        cam.pos_noise != 0.0
        or cam.rot_noise != 0.0
        or cam.outlier_rate > 0.0
        or cam.dropout_rate > 0.0
    ):
        for j in range(n):
            if cam.dropout_rate > 0.0 and rng_cam.uniform() < cam.dropout_rate:
                out.cam_valid[j] = False
                out.cam_R[j] = np.eye(3)
                out.cam_t[j] = 0.0
                continue
            if cam.pos_noise > 0.0:
                out.cam_t[j] = out.cam_t[j] + rng_cam.normal(size=3) * cam.pos_noise
            if cam.rot_noise > 0.0:
                wob = rng_cam.normal(size=3) * cam.rot_noise
                out.cam_R[j] = rot.exp(wob) @ out.cam_R[j]
            if cam.outlier_rate > 0.0 and rng_cam.uniform() < cam.outlier_rate:
                d = rng_cam.normal(size=3)
                out.cam_t[j] = out.cam_t[j] + d / np.linalg.norm(d) * cam.outlier_mag
    return out
