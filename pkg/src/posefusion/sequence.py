"""Frame/sequence containers and their JSON-lines file formats.

A sequence holds per-frame IMU pose and translation, four foot contact
flags, and an optional camera pose estimate, sampled at a fixed rate.
Storage is struct-of-arrays; ``Frame`` is a lightweight per-index view.

Sequence file: one JSON object per line
    {"timestamp": s, "theta_imu": [72], "t_imu": [3],
     "contacts": [4 bools], "camera": {"q": [w,x,y,z], "t": [3]} | null}

Result file: one JSON object per line
    {"timestamp": s, "theta": [72], "trans": [3]}
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import rotations as rot

TIMESTAMP_TOL = 1e-6


class SequenceError(ValueError):
    """Malformed sequence file or inconsistent frame data."""


@dataclass
class Frame:
    timestamp: float
    theta_imu: np.ndarray  # (72,)
    t_imu: np.ndarray  # (3,)
    contacts: np.ndarray  # (4,) bool
    cam_R: np.ndarray | None = None  # (3,3)
    cam_t: np.ndarray | None = None  # (3,)

    @property
    def has_camera(self) -> bool:
        return self.cam_R is not None


@dataclass
class Sequence:
    """Fixed-rate frame stream plus the subject's skeleton scale."""

    timestamps: np.ndarray  # (N,)
    theta_imu: np.ndarray  # (N, 72)
    t_imu: np.ndarray  # (N, 3)
    contacts: np.ndarray  # (N, 4) bool
    cam_valid: np.ndarray  # (N,) bool
    cam_R: np.ndarray  # (N, 3, 3); identity where invalid
    cam_t: np.ndarray  # (N, 3); zero where invalid
    rate_hz: float
    scale: float = 1.0

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype=float)
        self.theta_imu = np.asarray(self.theta_imu, dtype=float)
        self.t_imu = np.asarray(self.t_imu, dtype=float)
        self.contacts = np.asarray(self.contacts, dtype=bool)
        self.cam_valid = np.asarray(self.cam_valid, dtype=bool)
        self.cam_R = np.asarray(self.cam_R, dtype=float)
        self.cam_t = np.asarray(self.cam_t, dtype=float)
        n = len(self.timestamps)
        if n < 2:
            raise SequenceError("sequence must have at least 2 frames")
        shapes = {
            "theta_imu": (n, 72),
            "t_imu": (n, 3),
            "contacts": (n, 4),
            "cam_valid": (n,),
            "cam_R": (n, 3, 3),
            "cam_t": (n, 3),
        }
        for name, shape in shapes.items():
            if getattr(self, name).shape != shape:
                raise SequenceError(f"{name} must have shape {shape}")
        dt = np.diff(self.timestamps)
        if np.any(dt <= 0):
            raise SequenceError("timestamps must be strictly increasing")
        if np.abs(dt - 1.0 / self.rate_hz).max() > TIMESTAMP_TOL:
            raise SequenceError("timestamps must be uniform at rate_hz")
        for name in ("theta_imu", "t_imu", "cam_t"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise SequenceError(f"{name} contains non-finite values")

    def __len__(self) -> int:
        return len(self.timestamps)

    def frame(self, i: int) -> Frame:
        return Frame(
            timestamp=float(self.timestamps[i]),
            theta_imu=self.theta_imu[i],
            t_imu=self.t_imu[i],
            contacts=self.contacts[i],
            cam_R=self.cam_R[i] if self.cam_valid[i] else None,
            cam_t=self.cam_t[i] if self.cam_valid[i] else None,
        )

    def slice(self, start: int, stop: int) -> "Sequence":
        return Sequence(
            timestamps=self.timestamps[start:stop].copy(),
            theta_imu=self.theta_imu[start:stop].copy(),
            t_imu=self.t_imu[start:stop].copy(),
            contacts=self.contacts[start:stop].copy(),
            cam_valid=self.cam_valid[start:stop].copy(),
            cam_R=self.cam_R[start:stop].copy(),
            cam_t=self.cam_t[start:stop].copy(),
            rate_hz=self.rate_hz,
            scale=self.scale,
        )

    def copy(self) -> "Sequence":
        return self.slice(0, len(self))


def load_sequence(path: str | Path, scale: float = 1.0) -> Sequence:
    path = Path(path)
    if not path.exists():
        raise SequenceError(f"sequence file not found: {path}")
    ts, thetas, t_imus, contacts, valid, Rs, tcs = [], [], [], [], [], [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise SequenceError(f"{path}:{lineno}: invalid JSON: {e}") from e
            try:
                ts.append(float(obj["timestamp"]))
                thetas.append(np.asarray(obj["theta_imu"], dtype=float))
                t_imus.append(np.asarray(obj["t_imu"], dtype=float))
                contacts.append(np.asarray(obj["contacts"], dtype=bool))
                cam = obj.get("camera")
            except (KeyError, TypeError, ValueError) as e:
                raise SequenceError(f"{path}:{lineno}: bad frame record: {e}") from e
            if cam is None:
                valid.append(False)
                Rs.append(np.eye(3))
                tcs.append(np.zeros(3))
            else:
                valid.append(True)
                Rs.append(rot.from_quat_wxyz(np.asarray(cam["q"], dtype=float)))
                tcs.append(np.asarray(cam["t"], dtype=float))
    if len(ts) < 2:
        raise SequenceError(f"{path}: sequence must have at least 2 frames")
    ts_arr = np.asarray(ts)
    rate = 1.0 / float(np.median(np.diff(ts_arr)))
    try:
        return Sequence(
            timestamps=ts_arr,
            theta_imu=np.stack(thetas),
            t_imu=np.stack(t_imus),
            contacts=np.stack(contacts),
            cam_valid=np.asarray(valid, dtype=bool),
            cam_R=np.stack(Rs),
            cam_t=np.stack(tcs),
            rate_hz=rate,
            scale=scale,
        )
    except (SequenceError, ValueError) as e:
        raise SequenceError(f"{path}: {e}") from e


def save_sequence(seq: Sequence, path: str | Path) -> None:
    with open(path, "w") as fh:
        for i in range(len(seq)):
            cam = None
            if seq.cam_valid[i]:
                cam = {
                    "q": rot.to_quat_wxyz(seq.cam_R[i]).tolist(),
                    "t": seq.cam_t[i].tolist(),
                }
            fh.write(
                json.dumps(
                    {
                        "timestamp": float(seq.timestamps[i]),
                        "theta_imu": seq.theta_imu[i].tolist(),
                        "t_imu": seq.t_imu[i].tolist(),
                        "contacts": [bool(c) for c in seq.contacts[i]],
                        "camera": cam,
                    }
                )
                + "\n"
            )


def save_result(timestamps: np.ndarray, theta: np.ndarray, trans: np.ndarray, path: str | Path) -> None:
    """Write optimized poses as result JSONL ({timestamp, theta, trans})."""
    with open(path, "w") as fh:
        for i in range(len(timestamps)):
            fh.write(
                json.dumps(
                    {
                        "timestamp": float(timestamps[i]),
                        "theta": np.asarray(theta[i]).tolist(),
                        "trans": np.asarray(trans[i]).tolist(),
                    }
                )
                + "\n"
            )


def load_result(path: str | Path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Read a result JSONL file: (timestamps (N,), theta (N,72), trans (N,3))."""
    path = Path(path)
    if not path.exists():
        raise SequenceError(f"result file not found: {path}")
    ts, thetas, trans = [], [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                ts.append(float(obj["timestamp"]))
                thetas.append(np.asarray(obj["theta"], dtype=float))
                trans.append(np.asarray(obj["trans"], dtype=float))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
                raise SequenceError(f"{path}:{lineno}: bad result record: {e}") from e
    if not ts:
        raise SequenceError(f"{path}: empty result file")
    return np.asarray(ts), np.stack(thetas), np.stack(trans)
