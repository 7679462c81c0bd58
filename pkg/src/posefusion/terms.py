"""Energy terms of the joint objective, in readable vectorized numpy.

The objective over a batch of T frames couples five terms:

* self-localization: geodesic distance between the camera orientation
  predicted from the pose and the localized camera orientation,
* contact: contact-flagged foot markers snap to their nearest scene points,
* slide: contact-flagged markers stay put across consecutive frames,
* smoothness: consecutive translation, root-rotation, and head-rotation
  increments,
* pose prior: non-root pose stays near the IMU estimate.

Every un-squared Euclidean norm is smoothed as sqrt(|.|^2 + MU^2) - MU so
the objective is differentiable at its zero set (which the optimizer visits
by design). MU is small enough that values differ from true norms by < 1e-6.

Variable vectors are laid out as [theta_1..theta_T | trans_1..trans_T],
i.e. 72T pose entries followed by 3T translations.
"""

from __future__ import annotations

import numpy as np

from . import rotations as rot
from .body import NUM_JOINTS, Skeleton, forward_kinematics_batch, head_orientation_batch
from .config import FusionConfig
from .scene import SceneIndex
from .sequence import Sequence

MU = 1e-6  # norm smoothing floor


def smooth_norm(sq: np.ndarray) -> np.ndarray:
    """sqrt(sq + MU^2) - MU elementwise, for sq = squared norms."""
    return np.sqrt(sq + MU * MU) - MU


def pack_vars(theta: np.ndarray, trans: np.ndarray) -> np.ndarray:
    """Stack (T,72) poses and (T,3) translations into a flat (75T,) vector."""
    return np.concatenate([np.asarray(theta).reshape(-1), np.asarray(trans).reshape(-1)])


def unpack_vars(vars_: np.ndarray, T: int) -> tuple[np.ndarray, np.ndarray]:
    vars_ = np.asarray(vars_, dtype=float)
    if vars_.shape != (75 * T,):
        raise ValueError(f"expected {75 * T} variables for T={T}, got {vars_.shape}")
    return vars_[: 72 * T].reshape(T, 72), vars_[72 * T :].reshape(T, 3)


def e_self(
    theta: np.ndarray,
    R_HC: np.ndarray,
    cam_R: np.ndarray,
    cam_valid: np.ndarray,
    sk: Skeleton,
) -> float:
    """Mean geodesic distance between predicted and localized camera
    orientation. Frames without a camera estimate are skipped and the mean
    is renormalized over the remaining ones."""
    valid = np.asarray(cam_valid, dtype=bool)
    n = int(valid.sum())
    if n == 0:
        return 0.0
    head = head_orientation_batch(sk, np.asarray(theta)[valid])
    pred = head @ np.asarray(R_HC, dtype=float)
    psi, _ = rot.relative_angles(pred, np.asarray(cam_R)[valid])
    return float(np.sum(smooth_norm(psi * psi)) / n)


def e_contact(
    theta: np.ndarray,
    trans: np.ndarray,
    contacts: np.ndarray,
    sk: Skeleton,
    scene_idx: SceneIndex | None,
    targets: np.ndarray | None = None,
) -> float:
    """Contact-flagged markers to nearest scene points, part-averaged.

    Pass precomputed ``targets`` (T, M, 3) to evaluate against frozen
    nearest points (the optimizer refreshes them once per outer iteration);
    otherwise they are queried from the scene index.
    """
    from .body import markers_batch

    theta = np.asarray(theta, dtype=float)
    trans = np.asarray(trans, dtype=float)
    c = np.asarray(contacts, dtype=float)
    T = theta.shape[0]
    P = markers_batch(sk, theta, trans)
    if targets is None:
        if scene_idx is None:
            raise ValueError("need a scene index or precomputed targets")
        targets, _ = scene_idx.closest_points(P.reshape(-1, 3))
        targets = targets.reshape(P.shape)
    _, _, parts, sizes = sk.flat_markers()
    d2 = np.sum((P - targets) ** 2, axis=-1)  # (T, M)
    per_marker = smooth_norm(d2) / sizes[parts]
    flags = c[:, parts]  # (T, M)
    return float(np.sum(flags * per_marker) / (4 * T))


def e_slide(
    theta: np.ndarray,
    trans: np.ndarray,
    contacts: np.ndarray,
    sk: Skeleton,
) -> float:
    """Displacement of markers whose part is in contact in both of two
    consecutive frames, part-averaged."""
    from .body import markers_batch

    theta = np.asarray(theta, dtype=float)
    trans = np.asarray(trans, dtype=float)
    c = np.asarray(contacts, dtype=float)
    T = theta.shape[0]
    if T < 2:
        raise ValueError("slide term needs at least 2 frames")
    P = markers_batch(sk, theta, trans)
    _, _, parts, sizes = sk.flat_markers()
    d2 = np.sum((P[:-1] - P[1:]) ** 2, axis=-1)  # (T-1, M)
    per_marker = smooth_norm(d2) / sizes[parts]
    flags = (c[:-1] * c[1:])[:, parts]
    return float(np.sum(flags * per_marker) / (4 * (T - 1)))


def e_smooth(
    theta: np.ndarray, trans: np.ndarray, sk: Skeleton
) -> tuple[float, float, float]:
    """(E_T, E_G, E_H): mean consecutive translation distance, root-rotation
    geodesic increment, and head-rotation geodesic increment."""
    theta = np.asarray(theta, dtype=float)
    trans = np.asarray(trans, dtype=float)
    T = theta.shape[0]
    if T < 2:
        raise ValueError("smoothness terms need at least 2 frames")
    dt2 = np.sum((trans[:-1] - trans[1:]) ** 2, axis=-1)
    E_T = float(np.mean(smooth_norm(dt2)))
    roots = rot.exp_many(theta[:, :3])
    psi_g, _ = rot.relative_angles(roots[:-1], roots[1:])
    E_G = float(np.mean(smooth_norm(psi_g * psi_g)))
    heads = head_orientation_batch(sk, theta)
    psi_h, _ = rot.relative_angles(heads[:-1], heads[1:])
    E_H = float(np.mean(smooth_norm(psi_h * psi_h)))
    return E_T, E_G, E_H


def e_imu(theta: np.ndarray, theta_imu: np.ndarray) -> float:
    """Per-frame Euclidean distance of the non-root pose entries to the IMU
    estimate, averaged over frames. The root triple is masked out."""
    d = np.asarray(theta, dtype=float) - np.asarray(theta_imu, dtype=float)
    d = d.reshape(d.shape[0], NUM_JOINTS, 3).copy()
    d[:, 0] = 0.0
    sq = np.sum(d.reshape(d.shape[0], -1) ** 2, axis=-1)
    return float(np.mean(smooth_norm(sq)))


def evaluate_objective(
    vars_: np.ndarray,
    batch: Sequence,
    cfg: FusionConfig,
    sk: Skeleton,
    scene_idx: SceneIndex | None,
    R_HC: np.ndarray,
    contact_targets: np.ndarray | None = None,
) -> tuple[float, dict[str, float]]:
    """Weighted total energy and its per-term breakdown.

    The breakdown holds the weighted contributions; their sum is exactly
    (same floats, same order) the returned total. Raw unweighted term
    values are included under 'raw_*' keys for reporting.
    """
    T = len(batch)
    theta, trans = unpack_vars(vars_, T)
    E_s = e_self(theta, R_HC, batch.cam_R, batch.cam_valid, sk)
    if scene_idx is None and contact_targets is None:
        E_c = 0.0  # no scene: the contact term is inert
    else:
        E_c = e_contact(theta, trans, batch.contacts, sk, scene_idx, targets=contact_targets)
    E_v = e_slide(theta, trans, batch.contacts, sk)
    E_T, E_G, E_H = e_smooth(theta, trans, sk)
    E_p = e_imu(theta, batch.theta_imu)
    weighted = {
        "self": cfg.w_s * E_s,
        "contact": cfg.w_sc * cfg.w_c * E_c,
        "slide": cfg.w_sc * cfg.w_v * E_v,
        "smooth_t": cfg.w_sm * cfg.w_T * E_T,
        "smooth_g": cfg.w_sm * cfg.w_G * E_G,
        "smooth_h": cfg.w_sm * cfg.w_H * E_H,
        "imu": cfg.w_p * E_p,
    }
    total = float(sum(weighted.values()))
    breakdown = dict(weighted)
    breakdown.update(
        {
            "raw_self": E_s,
            "raw_contact": E_c,
            "raw_slide": E_v,
            "raw_smooth_t": E_T,
            "raw_smooth_g": E_G,
            "raw_smooth_h": E_H,
            "raw_imu": E_p,
        }
    )
    return total, breakdown


WEIGHTED_KEYS = ("self", "contact", "slide", "smooth_t", "smooth_g", "smooth_h", "imu")
