"""Fused objective + analytic gradient evaluation for a frame batch.

This is the numpy fallback of the optimizer's hot path; the numba twin
lives in :mod:`posefusion.kernels.numba_backend` and must agree with it to
float precision (see kernels tests). Nearest scene points are passed in as
frozen targets; the optimizer refreshes them once per outer iteration.

Gradient derivation notes (verified against central finite differences):

* exp((a + d)^) = exp(a^) exp((Jr(a) d)^): local axis-angle perturbations
  become right-perturbations through the right Jacobian.
* For the geodesic angle psi between R1 and a fixed R2, with unit axis
  u = log(R1^T R2)/psi: d psi = -u . v under R1 -> R1 exp(v^), and
  d psi = +u . w under R2 -> R2 exp(w^).
* A right-perturbation of chain factor i travels to the end of the product
  through the suffix rotation: exp(g^) C = C exp((C^T g)^).
* A point p rigidly below joint i (world rotation W_i, origin x_i) moves by
  dp = (W_i Jr di) x (p - x_i).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import rotations as rot
from .body import NUM_JOINTS, Skeleton, _ancestor_chains
from .terms import MU

MU2 = MU * MU


@dataclass
class BatchProblem:
    """Plain-array view of one optimization batch (skeleton, measurements,
    weights, frozen contact targets). Built once per outer iteration."""

    parents: np.ndarray  # (J,) int64
    offsets: np.ndarray  # (J,3)
    scale: float
    head_chain: np.ndarray  # (C,) int64
    m_joints: np.ndarray  # (M,) int64
    m_locals: np.ndarray  # (M,3)
    m_parts: np.ndarray  # (M,) int64
    part_sizes: np.ndarray  # (4,) float
    anc_m: np.ndarray  # (K,) int64: marker index of each (marker, ancestor) pair
    anc_i: np.ndarray  # (K,) int64: ancestor joint of each pair
    theta_imu: np.ndarray  # (T,24,3)
    contacts: np.ndarray  # (T,4) float 0/1
    cam_validf: np.ndarray  # (T,) float 0/1
    cam_R: np.ndarray  # (T,3,3)
    R_HC: np.ndarray  # (3,3)
    targets: np.ndarray  # (T,M,3)
    w_self: float
    w_contact: float  # w_sc * w_c
    w_slide: float  # w_sc * w_v
    w_t: float  # w_sm * w_T
    w_g: float  # w_sm * w_G
    w_h: float  # w_sm * w_H
    w_imu: float

    @property
    def T(self) -> int:
        return self.theta_imu.shape[0]

    @property
    def n_cam(self) -> int:
        return int(self.cam_validf.sum())


def build_problem(
    sk: Skeleton,
    theta_imu: np.ndarray,
    contacts: np.ndarray,
    cam_valid: np.ndarray,
    cam_R: np.ndarray,
    R_HC: np.ndarray,
    targets: np.ndarray,
    weights: dict[str, float],
) -> BatchProblem:
    m_joints, m_locals, m_parts, part_sizes = sk.flat_markers()
    chains = _ancestor_chains(sk)
    anc_m, anc_i = [], []
    for m, j in enumerate(m_joints):
        for i in chains[j]:
            anc_m.append(m)
            anc_i.append(i)
    T = theta_imu.shape[0]
    return BatchProblem(
        parents=np.asarray(sk.parents, dtype=np.int64),
        offsets=np.asarray(sk.offsets, dtype=float),
        scale=float(sk.scale),
        head_chain=np.asarray(sk.head_chain, dtype=np.int64),
        m_joints=np.asarray(m_joints, dtype=np.int64),
        m_locals=np.asarray(m_locals, dtype=float),
        m_parts=np.asarray(m_parts, dtype=np.int64),
        part_sizes=np.asarray(part_sizes, dtype=float),
        anc_m=np.asarray(anc_m, dtype=np.int64),
        anc_i=np.asarray(anc_i, dtype=np.int64),
        theta_imu=np.asarray(theta_imu, dtype=float).reshape(T, NUM_JOINTS, 3),
        contacts=np.asarray(contacts, dtype=float),
        cam_validf=np.asarray(cam_valid, dtype=float),
        cam_R=np.asarray(cam_R, dtype=float),
        R_HC=np.asarray(R_HC, dtype=float),
        targets=np.asarray(targets, dtype=float),
        w_self=weights["w_s"],
        w_contact=weights["w_sc"] * weights["w_c"],
        w_slide=weights["w_sc"] * weights["w_v"],
        w_t=weights["w_sm"] * weights["w_T"],
        w_g=weights["w_sm"] * weights["w_G"],
        w_h=weights["w_sm"] * weights["w_H"],
        w_imu=weights["w_p"],
    )


def _fk_arrays(
    p: BatchProblem, theta: np.ndarray, trans: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Local rotations, right Jacobians, world rotations, world positions."""
    Rloc = rot.exp_many(theta)
    Jr = rot.right_jacobian_many(theta)
    T = theta.shape[0]
    J = p.parents.shape[0]
    W = np.empty((T, J, 3, 3))
    X = np.empty((T, J, 3))
    W[:, 0] = Rloc[:, 0]
    X[:, 0] = p.scale * p.offsets[0]
    for j in range(1, J):
        par = p.parents[j]
        W[:, j] = W[:, par] @ Rloc[:, j]
        X[:, j] = X[:, par] + np.einsum("tab,b->ta", W[:, par], p.scale * p.offsets[j])
    X += trans[:, None, :]
    return Rloc, Jr, W, X


def objective_and_gradient(
    theta: np.ndarray, trans: np.ndarray, p: BatchProblem
) -> tuple[float, np.ndarray, np.ndarray]:
    """Total weighted energy plus gradients w.r.t. theta (T,24,3) and trans (T,3)."""
    theta = np.asarray(theta, dtype=float).reshape(-1, NUM_JOINTS, 3)
    trans = np.asarray(trans, dtype=float)
    T = theta.shape[0]
    Rloc, Jr, W, X = _fk_arrays(p, theta, trans)
    g_th = np.zeros((T, NUM_JOINTS, 3))
    g_t = np.zeros((T, 3))
    total = 0.0

    Msz = p.m_joints.shape[0]
    P = X[:, p.m_joints] + np.einsum("tmab,mb->tma", W[:, p.m_joints], p.scale * p.m_locals)
    gP = np.zeros((T, Msz, 3))
    touch_markers = False

    if p.w_contact > 0.0:
        d = P - p.targets
        s2 = np.einsum("tma,tma->tm", d, d)
        sn = np.sqrt(s2 + MU2)
        coef = p.w_contact * p.contacts[:, p.m_parts] / p.part_sizes[p.m_parts] / (4.0 * T)
        total += float(np.sum(coef * (sn - MU)))
        gP += (coef / sn)[..., None] * d
        touch_markers = True

    if p.w_slide > 0.0 and T >= 2:
        dP = P[:-1] - P[1:]
        s2 = np.einsum("tma,tma->tm", dP, dP)
        sn = np.sqrt(s2 + MU2)
        flags = (p.contacts[:-1] * p.contacts[1:])[:, p.m_parts]
        coef = p.w_slide * flags / p.part_sizes[p.m_parts] / (4.0 * (T - 1))
        total += float(np.sum(coef * (sn - MU)))
        g = (coef / sn)[..., None] * dP
        gP[:-1] += g
        gP[1:] -= g
        touch_markers = True

    if touch_markers:
        g_t += gP.sum(axis=1)
        WJr = W @ Jr
        lever = P[:, p.anc_m] - X[:, p.anc_i]  # (T,K,3)
        cr = np.cross(lever, gP[:, p.anc_m])
        contrib = np.einsum("tkba,tkb->tka", WJr[:, p.anc_i], cr)
        acc = np.zeros((NUM_JOINTS, T, 3))
        np.add.at(acc, p.anc_i, contrib.transpose(1, 0, 2))
        g_th += acc.transpose(1, 0, 2)

    chain = p.head_chain
    n_chain = chain.shape[0]
    need_head = (p.w_self > 0.0 and p.n_cam > 0) or (p.w_h > 0.0 and T >= 2)
    if need_head:
        H = Rloc[:, chain[0]]
        for c in range(1, n_chain):
            H = H @ Rloc[:, chain[c]]

    if p.w_self > 0.0 and p.n_cam > 0:
        Rpred = H @ p.R_HC
        psi, u = rot.relative_angles(Rpred, p.cam_R)
        sn = np.sqrt(psi * psi + MU2)
        total += p.w_self * float(np.sum(p.cam_validf * (sn - MU))) / p.n_cam
        pref = p.w_self / p.n_cam * (psi / sn) * p.cam_validf  # (T,)
        S = np.broadcast_to(p.R_HC, (T, 3, 3)).copy()
        for c in range(n_chain - 1, -1, -1):
            i = chain[c]
            Su = np.einsum("tab,tb->ta", S, u)
            g_th[:, i] -= pref[:, None] * np.einsum("tba,tb->ta", Jr[:, i], Su)
            if c > 0:
                S = Rloc[:, i] @ S

    if p.w_h > 0.0 and T >= 2:
        psi, u = rot.relative_angles(H[:-1], H[1:])
        sn = np.sqrt(psi * psi + MU2)
        total += p.w_h * float(np.sum(sn - MU)) / (T - 1)
        pref = p.w_h / (T - 1) * (psi / sn)  # (T-1,)
        S = np.broadcast_to(np.eye(3), (T, 3, 3)).copy()
        for c in range(n_chain - 1, -1, -1):
            i = chain[c]
            Su_l = np.einsum("tab,tb->ta", S[:-1], u)
            Su_r = np.einsum("tab,tb->ta", S[1:], u)
            g_th[:-1, i] -= pref[:, None] * np.einsum("tba,tb->ta", Jr[:-1, i], Su_l)
            g_th[1:, i] += pref[:, None] * np.einsum("tba,tb->ta", Jr[1:, i], Su_r)
            if c > 0:
                S = Rloc[:, i] @ S

    if p.w_g > 0.0 and T >= 2:
        psi, u = rot.relative_angles(Rloc[:-1, 0], Rloc[1:, 0])
        sn = np.sqrt(psi * psi + MU2)
        total += p.w_g * float(np.sum(sn - MU)) / (T - 1)
        pref = p.w_g / (T - 1) * (psi / sn)
        g_th[:-1, 0] -= pref[:, None] * np.einsum("tba,tb->ta", Jr[:-1, 0], u)
        g_th[1:, 0] += pref[:, None] * np.einsum("tba,tb->ta", Jr[1:, 0], u)

    if p.w_t > 0.0 and T >= 2:
        d = trans[:-1] - trans[1:]
        s2 = np.einsum("ta,ta->t", d, d)
        sn = np.sqrt(s2 + MU2)
        total += p.w_t * float(np.sum(sn - MU)) / (T - 1)
        g = (p.w_t / (T - 1) / sn)[:, None] * d
        g_t[:-1] += g
        g_t[1:] -= g

    if p.w_imu > 0.0:
        d = theta - p.theta_imu
        d[:, 0] = 0.0  # root triple is masked out of the prior
        s2 = np.einsum("tja,tja->t", d, d)
        sn = np.sqrt(s2 + MU2)
        total += p.w_imu * float(np.sum(sn - MU)) / T
        g_th += (p.w_imu / T / sn)[:, None, None] * d

    return total, g_th, g_t


def objective_value(theta: np.ndarray, trans: np.ndarray, p: BatchProblem) -> float:
    """Total weighted energy only (line searches, finite-difference oracles)."""
    theta = np.asarray(theta, dtype=float).reshape(-1, NUM_JOINTS, 3)
    trans = np.asarray(trans, dtype=float)
    T = theta.shape[0]
    Rloc = rot.exp_many(theta)
    J = p.parents.shape[0]
    W = np.empty((T, J, 3, 3))
    X = np.empty((T, J, 3))
    W[:, 0] = Rloc[:, 0]
    X[:, 0] = p.scale * p.offsets[0]
    for j in range(1, J):
        par = p.parents[j]
        W[:, j] = W[:, par] @ Rloc[:, j]
        X[:, j] = X[:, par] + np.einsum("tab,b->ta", W[:, par], p.scale * p.offsets[j])
    X += trans[:, None, :]
    total = 0.0

    if p.w_contact > 0.0 or p.w_slide > 0.0:
        P = X[:, p.m_joints] + np.einsum(
            "tmab,mb->tma", W[:, p.m_joints], p.scale * p.m_locals
        )
        if p.w_contact > 0.0:
            d = P - p.targets
            s2 = np.einsum("tma,tma->tm", d, d)
            coef = p.w_contact * p.contacts[:, p.m_parts] / p.part_sizes[p.m_parts] / (4.0 * T)
            total += float(np.sum(coef * (np.sqrt(s2 + MU2) - MU)))
        if p.w_slide > 0.0 and T >= 2:
            dP = P[:-1] - P[1:]
            s2 = np.einsum("tma,tma->tm", dP, dP)
            flags = (p.contacts[:-1] * p.contacts[1:])[:, p.m_parts]
            coef = p.w_slide * flags / p.part_sizes[p.m_parts] / (4.0 * (T - 1))
            total += float(np.sum(coef * (np.sqrt(s2 + MU2) - MU)))

    chain = p.head_chain
    need_head = (p.w_self > 0.0 and p.n_cam > 0) or (p.w_h > 0.0 and T >= 2)
    if need_head:
        H = Rloc[:, chain[0]]
        for c in range(1, chain.shape[0]):
            H = H @ Rloc[:, chain[c]]
    if p.w_self > 0.0 and p.n_cam > 0:
        psi, _ = rot.relative_angles(H @ p.R_HC, p.cam_R)
        total += p.w_self * float(
            np.sum(p.cam_validf * (np.sqrt(psi * psi + MU2) - MU))
        ) / p.n_cam
    if p.w_h > 0.0 and T >= 2:
        psi, _ = rot.relative_angles(H[:-1], H[1:])
        total += p.w_h * float(np.sum(np.sqrt(psi * psi + MU2) - MU)) / (T - 1)
    if p.w_g > 0.0 and T >= 2:
        psi, _ = rot.relative_angles(Rloc[:-1, 0], Rloc[1:, 0])
        total += p.w_g * float(np.sum(np.sqrt(psi * psi + MU2) - MU)) / (T - 1)
    if p.w_t > 0.0 and T >= 2:
        d = trans[:-1] - trans[1:]
        s2 = np.einsum("ta,ta->t", d, d)
        total += p.w_t * float(np.sum(np.sqrt(s2 + MU2) - MU)) / (T - 1)
    if p.w_imu > 0.0:
        d = theta - p.theta_imu
        d[:, 0] = 0.0
        s2 = np.einsum("tja,tja->t", d, d)
        total += p.w_imu * float(np.sum(np.sqrt(s2 + MU2) - MU)) / T
    return total
