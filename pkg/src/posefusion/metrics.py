"""Evaluation metrics: bidirectional Chamfer distance, foot-contact
quality (distance to surface, sliding), and drift-versus-distance curves.

All distances are reported in centimeters. No alignment (Procrustes or
otherwise) is applied before comparison: results are evaluated in the
scene frame exactly as produced.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .body import Skeleton, forward_kinematics_batch, markers_batch
from .scene import SceneIndex

DEFAULT_MILESTONES = (0.0, 70.0, 200.0, 380.0)  # meters of distance traveled


@dataclass
class MetricsReport:
    chamfer_cm: float
    dist_to_surface_cm: float | None  # None when no contacts are flagged
    foot_sliding_cm: float | None
    drift_curve: list[tuple[float, float]]  # (distance_traveled m, error cm)
    timings_s: dict[str, float] = field(default_factory=dict)

    def to_json(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            json.dump(asdict(self), fh, indent=2)


def chamfer(a: np.ndarray, b: np.ndarray) -> float:
    """Bidirectional Chamfer distance between two point sets, in cm:
    the mean of the two directed mean nearest-neighbor distances."""
    a = np.asarray(a, dtype=float).reshape(-1, 3)
    b = np.asarray(b, dtype=float).reshape(-1, 3)
    if a.shape[0] == 0 or b.shape[0] == 0:
        raise ValueError("chamfer distance needs non-empty point sets")
    d_ab, _ = cKDTree(b).query(a)
    d_ba, _ = cKDTree(a).query(b)
    return float((d_ab.mean() + d_ba.mean()) / 2.0 * 100.0)


def body_points(sk: Skeleton, theta: np.ndarray, trans: np.ndarray) -> np.ndarray:
    """Per-frame comparison point set: joint positions plus foot markers,
    (T, J+M, 3). The desk-scale stand-in for a body surface sampling."""
    W, X = forward_kinematics_batch(sk, theta, trans)
    markers = markers_batch(sk, theta, trans)
    return np.concatenate([X, markers], axis=1)


def sequence_chamfer(
    sk: Skeleton,
    theta_a: np.ndarray,
    trans_a: np.ndarray,
    theta_b: np.ndarray,
    trans_b: np.ndarray,
) -> float:
    """Mean per-frame Chamfer distance between two pose sequences, in cm."""
    if theta_a.shape[0] != theta_b.shape[0]:
        raise ValueError("sequences must have equal length")
    pa = body_points(sk, theta_a, trans_a)
    pb = body_points(sk, theta_b, trans_b)
    vals = [chamfer(pa[t], pb[t]) for t in range(pa.shape[0])]
    return float(np.mean(vals))


def foot_metrics(
    theta: np.ndarray,
    trans: np.ndarray,
    scene_idx: SceneIndex,
    contacts: np.ndarray,
    sk: Skeleton,
) -> tuple[float | None, float | None]:
    """(distance to surface, sliding), both in cm, over contact frames.

    Distance to surface: nearest-scene-point distance of every marker of a
    contact-flagged part, averaged. Sliding: horizontal (xy) displacement
    of those markers between consecutive frames where the part stays in
    contact, averaged. Both are None when nothing is flagged (absent, not
    zero).
    """
    contacts = np.asarray(contacts, dtype=bool)
    P = markers_batch(sk, np.asarray(theta, dtype=float), np.asarray(trans, dtype=float))
    _, _, parts, _ = sk.flat_markers()
    flags = contacts[:, parts]  # (T, M)
    dist = None
    if flags.any():
        d = scene_idx.closest_points(P[flags])[1]
        dist = float(d.mean() * 100.0)
    both = flags[:-1] & flags[1:]
    slide = None
    if both.any():
        dxy = P[:-1, :, :2] - P[1:, :, :2]
        slide = float(np.linalg.norm(dxy[both], axis=1).mean() * 100.0)
    return dist, slide


def path_length(trans: np.ndarray) -> np.ndarray:
    """Cumulative path length per frame, meters."""
    steps = np.linalg.norm(np.diff(np.asarray(trans, dtype=float), axis=0), axis=1)
    return np.concatenate([[0.0], np.cumsum(steps)])


def drift_curve(
    result_trans: np.ndarray,
    truth_trans: np.ndarray,
    milestones: tuple[float, ...] = DEFAULT_MILESTONES,
    rate_hz: float | None = None,
) -> list[tuple[float, float]]:
    """Root-position error sampled where the ground-truth distance traveled
    crosses each milestone.

    The error at a milestone is averaged over the following second of
    frames (or 10 frames when the rate is unknown) to damp single-frame
    noise. Milestones beyond the traveled distance are omitted.
    """
    result_trans = np.asarray(result_trans, dtype=float)
    truth_trans = np.asarray(truth_trans, dtype=float)
    if result_trans.shape != truth_trans.shape:
        raise ValueError("result and truth must have equal shapes")
    cum = path_length(truth_trans)
    err = np.linalg.norm(result_trans - truth_trans, axis=1) * 100.0
    window = int(round(rate_hz)) if rate_hz else 10
    out = []
    for m in milestones:
        if m > cum[-1]:
            continue
        j = int(np.searchsorted(cum, m))
        out.append((float(m), float(err[j : j + max(window, 1)].mean())))
    return out


def save_drift_csv(curve: list[tuple[float, float]], path: str | Path) -> None:
    with open(path, "w") as fh:
        fh.write("distance_m,error_cm\n")
        for d, e in curve:
            fh.write(f"{d},{e}\n")
