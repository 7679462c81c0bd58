"""Articulated 24-joint body: kinematic tree, forward kinematics, head/camera
orientation mapping, and rigidly attached foot marker points.

The skeleton is a pure kinematic structure (joint tree + bone offsets); there
is no mesh or learned shape space. A single scalar ``scale`` stretches all
bone offsets and marker offsets uniformly. Scenes and skeletons are z-up.

Pose convention: ``theta`` is a 72-vector of 24 axis-angle triples (triple 0
is the global/root orientation), ``trans`` is the root translation in meters.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from . import rotations as rot

NUM_JOINTS = 24

# Foot part order; contacts arrays follow the same order everywhere.
FOOT_PARTS = ("left_toe", "left_heel", "right_toe", "right_heel")


@dataclass(frozen=True)
class Skeleton:
    """Immutable joint tree. Safe to share across threads.

    parents[0] == -1 marks the root; indices are topologically ordered
    (parent < child). ``head_chain`` is the ancestor path from the root to
    the head joint. ``marker_joints[k]`` / ``marker_offsets[k]`` give the
    attachment joint and local offsets for foot part k (FOOT_PARTS order).
    """

    names: tuple[str, ...]
    parents: np.ndarray  # (J,) int
    offsets: np.ndarray  # (J, 3) float, parent-frame, meters
    head_chain: np.ndarray  # (C,) int
    marker_joints: np.ndarray  # (4,) int
    marker_offsets: tuple[np.ndarray, ...] = field(default_factory=tuple)  # 4 x (Mk, 3)
    scale: float = 1.0

    def __post_init__(self):
        parents = np.asarray(self.parents, dtype=int)
        offsets = np.asarray(self.offsets, dtype=float)
        object.__setattr__(self, "parents", parents)
        object.__setattr__(self, "offsets", offsets)
        object.__setattr__(self, "head_chain", np.asarray(self.head_chain, dtype=int))
        object.__setattr__(self, "marker_joints", np.asarray(self.marker_joints, dtype=int))
        object.__setattr__(
            self, "marker_offsets", tuple(np.asarray(m, dtype=float) for m in self.marker_offsets)
        )
        self._validate()

    def _validate(self):
        J = len(self.names)
        if self.parents.shape != (J,) or self.offsets.shape != (J, 3):
            raise ValueError("skeleton arrays inconsistent with joint count")
        if not np.all(np.isfinite(self.offsets)):
            raise ValueError("skeleton offsets must be finite")
        roots = np.flatnonzero(self.parents < 0)
        if roots.tolist() != [0]:
            raise ValueError("skeleton must have exactly one root at index 0")
        if np.any(self.parents[1:] >= np.arange(1, J)):
            raise ValueError("skeleton joints must be topologically ordered (parent < child)")
        chain = self.head_chain
        if len(chain) == 0 or chain[0] != 0:
            raise ValueError("head_chain must start at the root")
        for a, b in zip(chain[:-1], chain[1:]):
            if self.parents[b] != a:
                raise ValueError("head_chain must follow parent links")
        if len(self.marker_offsets) != 4 or self.marker_joints.shape != (4,):
            raise ValueError("exactly four foot marker sets are required")
        for m in self.marker_offsets:
            if m.ndim != 2 or m.shape[0] == 0 or m.shape[1] != 3:
                raise ValueError("every foot marker set must be a non-empty (M, 3) array")
        if not (np.isfinite(self.scale) and self.scale > 0):
            raise ValueError("scale must be positive and finite")

    @property
    def num_joints(self) -> int:
        return len(self.names)

    def with_scale(self, scale: float) -> "Skeleton":
        return Skeleton(
            names=self.names,
            parents=self.parents,
            offsets=self.offsets,
            head_chain=self.head_chain,
            marker_joints=self.marker_joints,
            marker_offsets=self.marker_offsets,
            scale=scale,
        )

    def flat_markers(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """All markers flattened: (joints (M,), locals (M,3), part id (M,), part size (4,))."""
        joints, locals_, parts = [], [], []
        sizes = np.empty(4, dtype=int)
        for k in range(4):
            m = self.marker_offsets[k]
            sizes[k] = m.shape[0]
            joints.extend([self.marker_joints[k]] * m.shape[0])
            locals_.append(m)
            parts.extend([k] * m.shape[0])
        return (
            np.asarray(joints, dtype=int),
            np.concatenate(locals_, axis=0),
            np.asarray(parts, dtype=int),
            sizes,
        )


@dataclass
class BodyPose:
    """Pose theta (72,) in radians plus root translation (3,) in meters."""

    theta: np.ndarray
    trans: np.ndarray

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=float).reshape(72)
        self.trans = np.asarray(self.trans, dtype=float).reshape(3)
        if not (np.all(np.isfinite(self.theta)) and np.all(np.isfinite(self.trans))):
            raise ValueError("pose must be finite")


@dataclass
class JointTransforms:
    """World rotation (J,3,3) and world position (J,3) per joint."""

    rotations: np.ndarray
    positions: np.ndarray


def load_skeleton(path: str | Path | None = None) -> Skeleton:
    """Load a skeleton JSON file; with no path, the bundled default body.

    Schema (version 1): {version, scale, joints: [{name, parent, offset}],
    head_chain: [indices], foot_markers: {part: {joint, offsets}}} with the
    four parts named left_toe/left_heel/right_toe/right_heel.
    """
    if path is None:
        raw = resources.files("posefusion.data").joinpath("default_skeleton.json").read_text()
        doc = json.loads(raw)
    else:
        with open(path) as fh:
            doc = json.load(fh)
    if doc.get("version") != 1:
        raise ValueError(f"unsupported skeleton file version: {doc.get('version')!r}")
    joints = doc["joints"]
    names = tuple(j["name"] for j in joints)
    parents = np.array([j["parent"] for j in joints], dtype=int)
    offsets = np.array([j["offset"] for j in joints], dtype=float)
    fm = doc["foot_markers"]
    marker_joints = np.array([fm[p]["joint"] for p in FOOT_PARTS], dtype=int)
    marker_offsets = tuple(np.array(fm[p]["offsets"], dtype=float) for p in FOOT_PARTS)
    return Skeleton(
        names=names,
        parents=parents,
        offsets=offsets,
        head_chain=np.array(doc["head_chain"], dtype=int),
        marker_joints=marker_joints,
        marker_offsets=marker_offsets,
        scale=float(doc.get("scale", 1.0)),
    )


def save_skeleton(sk: Skeleton, path: str | Path) -> None:
    doc = {
        "version": 1,
        "scale": sk.scale,
        "up_axis": "z",
        "joints": [
            {"name": n, "parent": int(p), "offset": o.tolist()}
            for n, p, o in zip(sk.names, sk.parents, sk.offsets)
        ],
        "head_chain": sk.head_chain.tolist(),
        "foot_markers": {
            part: {"joint": int(sk.marker_joints[k]), "offsets": sk.marker_offsets[k].tolist()}
            for k, part in enumerate(FOOT_PARTS)
        },
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2)


def forward_kinematics(sk: Skeleton, pose: BodyPose) -> JointTransforms:
    """World transform of every joint by walking the tree root-to-leaf.

    Joint j: rotation = parent rotation @ exp(theta_j); position = parent
    position + parent rotation @ (scale * offset_j). The root uses trans +
    scale * offset_0 and exp of the global triple.
    """
    theta = pose.theta.reshape(NUM_JOINTS, 3)
    local = rot.exp_many(theta)
    J = sk.num_joints
    W = np.empty((J, 3, 3))
    X = np.empty((J, 3))
    W[0] = local[0]
    X[0] = sk.scale * sk.offsets[0]
    for j in range(1, J):
        p = sk.parents[j]
        W[j] = W[p] @ local[j]
        X[j] = X[p] + W[p] @ (sk.scale * sk.offsets[j])
    # trans enters through a single final addition so that translating the
    # pose translates every joint and marker bit-exactly
    X += pose.trans
    return JointTransforms(rotations=W, positions=X)


def head_orientation(sk: Skeleton, theta: np.ndarray) -> np.ndarray:
    """Product of exp(theta_i) along the head chain only.

    Equals the forward-kinematics world rotation of the head joint, but
    touches no other pose entries.
    """
    theta = np.asarray(theta, dtype=float).reshape(NUM_JOINTS, 3)
    R = np.eye(3)
    for i in sk.head_chain:
        R = R @ rot.exp(theta[i])
    return R


def head_camera_offset(theta0_imu: np.ndarray, R_cam0: np.ndarray, sk: Skeleton) -> np.ndarray:
    """Constant head-to-camera rotation calibrated at frame 0.

    Both inputs must already be in the scene frame (run frame alignment
    first). R_HC = R_head(theta0)^T @ R_cam0.
    """
    return head_orientation(sk, theta0_imu).T @ np.asarray(R_cam0, dtype=float)


def camera_from_pose(sk: Skeleton, theta: np.ndarray, R_HC: np.ndarray) -> np.ndarray:
    """Predicted camera orientation for a pose: R_head(theta) @ R_HC."""
    return head_orientation(sk, theta) @ np.asarray(R_HC, dtype=float)


def foot_points(sk: Skeleton, pose: BodyPose, k: int) -> np.ndarray:
    """World positions of the markers of foot part k (1-based, 1..4).

    Each marker is rigidly attached to its foot joint: position = joint
    world position + joint world rotation @ (scale * local offset).
    """
    if not 1 <= k <= 4:
        raise ValueError("foot part id must be in 1..4")
    tf = forward_kinematics(sk, BodyPose(theta=pose.theta, trans=np.zeros(3)))
    j = sk.marker_joints[k - 1]
    local = sk.scale * sk.marker_offsets[k - 1]
    # trans added last: translation equivariance holds bit-exactly
    return (tf.positions[j] + local @ tf.rotations[j].T) + pose.trans


def all_foot_points(sk: Skeleton, pose: BodyPose, transforms: JointTransforms | None = None) -> np.ndarray:
    """All foot markers as an (M, 3) array in flat_markers() order."""
    if transforms is None:
        return np.concatenate([foot_points(sk, pose, k) for k in range(1, 5)], axis=0)
    joints, locals_, _, _ = sk.flat_markers()
    W = transforms.rotations[joints]
    X = transforms.positions[joints]
    return X + np.einsum("mij,mj->mi", W, sk.scale * locals_)


def forward_kinematics_batch(
    sk: Skeleton, theta: np.ndarray, trans: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized FK over T frames: theta (T,72), trans (T,3) ->
    world rotations (T,J,3,3) and positions (T,J,3)."""
    T = theta.shape[0]
    local = rot.exp_many(theta.reshape(T, NUM_JOINTS, 3))
    J = sk.num_joints
    W = np.empty((T, J, 3, 3))
    X = np.empty((T, J, 3))
    W[:, 0] = local[:, 0]
    X[:, 0] = sk.scale * sk.offsets[0]
    for j in range(1, J):
        p = sk.parents[j]
        W[:, j] = W[:, p] @ local[:, j]
        X[:, j] = X[:, p] + W[:, p] @ (sk.scale * sk.offsets[j])
    X += trans[:, None, :]
    return W, X


def head_orientation_batch(sk: Skeleton, theta: np.ndarray) -> np.ndarray:
    """Head-chain rotation product per frame: theta (T,72) -> (T,3,3)."""
    T = theta.shape[0]
    th = theta.reshape(T, NUM_JOINTS, 3)
    local = rot.exp_many(th[:, sk.head_chain])
    R = local[:, 0]
    for c in range(1, len(sk.head_chain)):
        R = R @ local[:, c]
    return R


def markers_batch(sk: Skeleton, theta: np.ndarray, trans: np.ndarray) -> np.ndarray:
    """All foot markers per frame: (T, M, 3) in flat_markers() order."""
    W, X = forward_kinematics_batch(sk, theta, trans)
    joints, locals_, _, _ = sk.flat_markers()
    return X[:, joints] + np.einsum("tmij,mj->tmi", W[:, joints], sk.scale * locals_)


def _ancestor_chains(sk: Skeleton) -> list[list[int]]:
    """Per joint: ancestor path from the root down to the joint itself."""
    chains: list[list[int]] = []
    for j in range(sk.num_joints):
        chain = [j]
        p = sk.parents[j]
        while p >= 0:
            chain.append(int(p))
            p = sk.parents[p]
        chains.append(chain[::-1])
    return chains


def foot_points_jacobian(
    sk: Skeleton, pose: BodyPose, k: int
) -> tuple[np.ndarray, np.ndarray]:
    """Analytic Jacobian of foot part k's markers w.r.t. (theta, trans).

    Returns (J_theta, J_trans) with shapes (M, 3, 72) and (M, 3, 3). A
    marker below joint f responds only to ancestors of f: a perturbation of
    joint i rotates the marker about joint i's origin, transported through
    the right Jacobian of the local axis-angle.
    """
    if not 1 <= k <= 4:
        raise ValueError("foot part id must be in 1..4")
    theta = pose.theta.reshape(NUM_JOINTS, 3)
    tf = forward_kinematics(sk, pose)
    f = int(sk.marker_joints[k - 1])
    local = sk.scale * sk.marker_offsets[k - 1]
    pts = tf.positions[f] + local @ tf.rotations[f].T
    M = pts.shape[0]
    J_theta = np.zeros((M, 3, 72))
    chain = _ancestor_chains(sk)[f]
    for i in chain:
        Jr = rot.right_jacobian(theta[i])
        WJr = tf.rotations[i] @ Jr
        lever = pts - tf.positions[i]  # (M, 3)
        for m in range(M):
            J_theta[m, :, 3 * i : 3 * i + 3] = -rot.hat(lever[m]) @ WJr
    J_trans = np.broadcast_to(np.eye(3), (M, 3, 3)).copy()
    return J_theta, J_trans


def camera_orientation_jacobian(
    sk: Skeleton, theta: np.ndarray, R_HC: np.ndarray
) -> np.ndarray:
    """d(camera_from_pose)/d(theta) as a (3, 3, 72) tensor.

    Only head-chain entries are nonzero. Uses d exp(a)/da_i =
    exp(a) [Jr(a) e_i]_x with prefix/suffix products of the chain.
    """
    theta = np.asarray(theta, dtype=float).reshape(NUM_JOINTS, 3)
    chain = list(sk.head_chain)
    locals_ = [rot.exp(theta[i]) for i in chain]
    n = len(chain)
    prefixes = [np.eye(3)]
    for R in locals_:
        prefixes.append(prefixes[-1] @ R)
    suffixes = [np.eye(3)] * (n + 1)
    suffixes[n] = np.asarray(R_HC, dtype=float)
    for c in range(n - 1, -1, -1):
        suffixes[c] = locals_[c] @ suffixes[c + 1]
    out = np.zeros((3, 3, 72))
    for c, i in enumerate(chain):
        Jr = rot.right_jacobian(theta[i])
        base = prefixes[c] @ locals_[c]
        for a in range(3):
            out[:, :, 3 * i + a] = base @ rot.hat(Jr[:, a]) @ suffixes[c + 1]
    return out
