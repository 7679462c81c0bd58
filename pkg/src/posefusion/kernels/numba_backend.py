"""JIT-compiled twin of :mod:`posefusion.objective`.

Same math, loop style, compiled with numba. Kept in float-precision
agreement with the numpy fallback (enforced by tests); any change here must
be mirrored there.
"""

import numpy as np
from numba import njit

MU = 1e-6
MU2 = MU * MU
SMALL_ANGLE = 1e-7


@njit(cache=True)
def _exp3(a0, a1, a2, out):
    th2 = a0 * a0 + a1 * a1 + a2 * a2
    th = np.sqrt(th2)
    if th < SMALL_ANGLE:
        c1 = 1.0 - th2 / 6.0
        c2 = 0.5 - th2 / 24.0
    else:
        c1 = np.sin(th) / th
        c2 = (1.0 - np.cos(th)) / th2
    # K and K@K expanded for the skew matrix of (a0, a1, a2)
    out[0, 0] = 1.0 + c2 * (-a1 * a1 - a2 * a2)
    out[0, 1] = -c1 * a2 + c2 * (a0 * a1)
    out[0, 2] = c1 * a1 + c2 * (a0 * a2)
    out[1, 0] = c1 * a2 + c2 * (a0 * a1)
    out[1, 1] = 1.0 + c2 * (-a0 * a0 - a2 * a2)
    out[1, 2] = -c1 * a0 + c2 * (a1 * a2)
    out[2, 0] = -c1 * a1 + c2 * (a0 * a2)
    out[2, 1] = c1 * a0 + c2 * (a1 * a2)
    out[2, 2] = 1.0 + c2 * (-a0 * a0 - a1 * a1)


@njit(cache=True)
def _jr3(a0, a1, a2, out):
    th2 = a0 * a0 + a1 * a1 + a2 * a2
    th = np.sqrt(th2)
    if th < SMALL_ANGLE:
        c1 = 0.5
        c2 = 1.0 / 6.0
    else:
        c1 = (1.0 - np.cos(th)) / th2
        c2 = (th - np.sin(th)) / (th2 * th)
    out[0, 0] = 1.0 + c2 * (-a1 * a1 - a2 * a2)
    out[0, 1] = c1 * a2 + c2 * (a0 * a1)
    out[0, 2] = -c1 * a1 + c2 * (a0 * a2)
    out[1, 0] = -c1 * a2 + c2 * (a0 * a1)
    out[1, 1] = 1.0 + c2 * (-a0 * a0 - a2 * a2)
    out[1, 2] = c1 * a0 + c2 * (a1 * a2)
    out[2, 0] = c1 * a1 + c2 * (a0 * a2)
    out[2, 1] = -c1 * a0 + c2 * (a1 * a2)
    out[2, 2] = 1.0 + c2 * (-a0 * a0 - a1 * a1)


@njit(cache=True)
def _mm33(A, B, out):
    for r in range(3):
        for c in range(3):
            out[r, c] = A[r, 0] * B[0, c] + A[r, 1] * B[1, c] + A[r, 2] * B[2, c]


@njit(cache=True)
def _mtm33(A, B, out):
    # A^T @ B
    for r in range(3):
        for c in range(3):
            out[r, c] = A[0, r] * B[0, c] + A[1, r] * B[1, c] + A[2, r] * B[2, c]


@njit(cache=True)
def _rel_axis_angle(Q, u):
    """Angle of rotation Q and its unit axis written into u (zeroed when the
    angle is numerically zero). Mirrors rotations.log branch for branch."""
    trace = Q[0, 0] + Q[1, 1] + Q[2, 2]
    cos_th = (trace - 1.0) / 2.0
    if cos_th > 1.0:
        cos_th = 1.0
    elif cos_th < -1.0:
        cos_th = -1.0
    s0 = 0.5 * (Q[2, 1] - Q[1, 2])
    s1 = 0.5 * (Q[0, 2] - Q[2, 0])
    s2 = 0.5 * (Q[1, 0] - Q[0, 1])
    sin_th = np.sqrt(s0 * s0 + s1 * s1 + s2 * s2)
    th = np.arctan2(sin_th, cos_th)
    if th < SMALL_ANGLE:
        f = 2.0 / (1.0 + cos_th)
        r0 = f * s0
        r1 = f * s1
        r2 = f * s2
    elif th > np.pi - 1e-5:
        # axis from the largest diagonal of (Q + I)/2
        d0 = (Q[0, 0] + 1.0) / 2.0
        d1 = (Q[1, 1] + 1.0) / 2.0
        d2 = (Q[2, 2] + 1.0) / 2.0
        k = 0
        if d1 > d0:
            k = 1
        if d2 > (d1 if k == 1 else d0):
            k = 2
        u0 = (Q[0, k] + (1.0 if k == 0 else 0.0)) / 2.0 - cos_th * (1.0 if k == 0 else 0.0)
        u1 = (Q[1, k] + (1.0 if k == 1 else 0.0)) / 2.0 - cos_th * (1.0 if k == 1 else 0.0)
        u2 = (Q[2, k] + (1.0 if k == 2 else 0.0)) / 2.0 - cos_th * (1.0 if k == 2 else 0.0)
        n = np.sqrt(u0 * u0 + u1 * u1 + u2 * u2)
        u0 /= n
        u1 /= n
        u2 /= n
        if sin_th > 1e-12 and (u0 * s0 + u1 * s1 + u2 * s2) < 0.0:
            u0 = -u0
            u1 = -u1
            u2 = -u2
        r0 = th * u0
        r1 = th * u1
        r2 = th * u2
    else:
        f = th / sin_th
        r0 = f * s0
        r1 = f * s1
        r2 = f * s2
    psi = np.sqrt(r0 * r0 + r1 * r1 + r2 * r2)
    if psi > 0.0:
        u[0] = r0 / psi
        u[1] = r1 / psi
        u[2] = r2 / psi
    else:
        u[0] = 0.0
        u[1] = 0.0
        u[2] = 0.0
    return psi


@njit(cache=True)
def objective_kernel(
    theta,  # (T, 24, 3)
    trans,  # (T, 3)
    parents,  # (J,) int64
    offsets,  # (J, 3)
    scale,
    head_chain,  # (C,) int64
    m_joints,  # (M,) int64
    m_locals,  # (M, 3)
    m_parts,  # (M,) int64
    part_sizes,  # (4,)
    theta_imu,  # (T, 24, 3)
    contacts,  # (T, 4)
    cam_validf,  # (T,)
    cam_R,  # (T, 3, 3)
    R_HC,  # (3, 3)
    targets,  # (T, M, 3)
    w_self,
    w_contact,
    w_slide,
    w_t,
    w_g,
    w_h,
    w_imu,
    compute_grad,
):
    T = theta.shape[0]
    J = parents.shape[0]
    M = m_joints.shape[0]
    nc = head_chain.shape[0]
    total = 0.0
    g_th = np.zeros((T, J, 3))
    g_t = np.zeros((T, 3))

    Rloc = np.empty((T, J, 3, 3))
    for t in range(T):
        for j in range(J):
            _exp3(theta[t, j, 0], theta[t, j, 1], theta[t, j, 2], Rloc[t, j])
    Jr = np.empty((T, J, 3, 3))
    if compute_grad:
        for t in range(T):
            for j in range(J):
                _jr3(theta[t, j, 0], theta[t, j, 1], theta[t, j, 2], Jr[t, j])

    # forward kinematics; trans added last, matching the numpy path
    W = np.empty((T, J, 3, 3))
    X = np.empty((T, J, 3))
    for t in range(T):
        for a in range(3):
            for b in range(3):
                W[t, 0, a, b] = Rloc[t, 0, a, b]
            X[t, 0, a] = scale * offsets[0, a]
        for j in range(1, J):
            p = parents[j]
            _mm33(W[t, p], Rloc[t, j], W[t, j])
            for a in range(3):
                X[t, j, a] = X[t, p, a] + scale * (
                    W[t, p, a, 0] * offsets[j, 0]
                    + W[t, p, a, 1] * offsets[j, 1]
                    + W[t, p, a, 2] * offsets[j, 2]
                )
        for j in range(J):
            for a in range(3):
                X[t, j, a] += trans[t, a]

    use_markers = w_contact > 0.0 or (w_slide > 0.0 and T >= 2)
    P = np.empty((T, M, 3))
    gP = np.zeros((T, M, 3))
    if use_markers:
        for t in range(T):
            for m in range(M):
                j = m_joints[m]
                for a in range(3):
                    P[t, m, a] = X[t, j, a] + scale * (
                        W[t, j, a, 0] * m_locals[m, 0]
                        + W[t, j, a, 1] * m_locals[m, 1]
                        + W[t, j, a, 2] * m_locals[m, 2]
                    )

    if w_contact > 0.0:
        for t in range(T):
            for m in range(M):
                k = m_parts[m]
                c = contacts[t, k]
                if c == 0.0:
                    continue
                dx = P[t, m, 0] - targets[t, m, 0]
                dy = P[t, m, 1] - targets[t, m, 1]
                dz = P[t, m, 2] - targets[t, m, 2]
                sn = np.sqrt(dx * dx + dy * dy + dz * dz + MU2)
                coef = w_contact * c / part_sizes[k] / (4.0 * T)
                total += coef * (sn - MU)
                if compute_grad:
                    f = coef / sn
                    gP[t, m, 0] += f * dx
                    gP[t, m, 1] += f * dy
                    gP[t, m, 2] += f * dz

    if w_slide > 0.0 and T >= 2:
        for t in range(T - 1):
            for m in range(M):
                k = m_parts[m]
                c = contacts[t, k] * contacts[t + 1, k]
                if c == 0.0:
                    continue
                dx = P[t, m, 0] - P[t + 1, m, 0]
                dy = P[t, m, 1] - P[t + 1, m, 1]
                dz = P[t, m, 2] - P[t + 1, m, 2]
                sn = np.sqrt(dx * dx + dy * dy + dz * dz + MU2)
                coef = w_slide * c / part_sizes[k] / (4.0 * (T - 1))
                total += coef * (sn - MU)
                if compute_grad:
                    f = coef / sn
                    gP[t, m, 0] += f * dx
                    gP[t, m, 1] += f * dy
                    gP[t, m, 2] += f * dz
                    gP[t + 1, m, 0] -= f * dx
                    gP[t + 1, m, 1] -= f * dy
                    gP[t + 1, m, 2] -= f * dz

    if use_markers and compute_grad:
        WJr = np.empty((3, 3))
        for t in range(T):
            for m in range(M):
                gx = gP[t, m, 0]
                gy = gP[t, m, 1]
                gz = gP[t, m, 2]
                if gx == 0.0 and gy == 0.0 and gz == 0.0:
                    continue
                g_t[t, 0] += gx
                g_t[t, 1] += gy
                g_t[t, 2] += gz
                i = m_joints[m]
                while i >= 0:
                    lx = P[t, m, 0] - X[t, i, 0]
                    ly = P[t, m, 1] - X[t, i, 1]
                    lz = P[t, m, 2] - X[t, i, 2]
                    crx = ly * gz - lz * gy
                    cry = lz * gx - lx * gz
                    crz = lx * gy - ly * gx
                    _mm33(W[t, i], Jr[t, i], WJr)
                    for a in range(3):
                        g_th[t, i, a] += WJr[0, a] * crx + WJr[1, a] * cry + WJr[2, a] * crz
                    i = parents[i]

    n_cam = 0
    for t in range(T):
        if cam_validf[t] > 0.0:
            n_cam += 1
    need_head = (w_self > 0.0 and n_cam > 0) or (w_h > 0.0 and T >= 2)
    H = np.empty((T, 3, 3))
    if need_head:
        tmp = np.empty((3, 3))
        for t in range(T):
            for a in range(3):
                for b in range(3):
                    H[t, a, b] = Rloc[t, head_chain[0], a, b]
            for c in range(1, nc):
                _mm33(H[t], Rloc[t, head_chain[c]], tmp)
                for a in range(3):
                    for b in range(3):
                        H[t, a, b] = tmp[a, b]

    u = np.empty(3)
    Q = np.empty((3, 3))
    S = np.empty((3, 3))
    S2 = np.empty((3, 3))
    Rpred = np.empty((3, 3))

    if w_self > 0.0 and n_cam > 0:
        for t in range(T):
            if cam_validf[t] == 0.0:
                continue
            _mm33(H[t], R_HC, Rpred)
            _mtm33(Rpred, cam_R[t], Q)
            psi = _rel_axis_angle(Q, u)
            sn = np.sqrt(psi * psi + MU2)
            total += w_self * (sn - MU) / n_cam
            if compute_grad:
                pref = w_self / n_cam * psi / sn
                for a in range(3):
                    for b in range(3):
                        S[a, b] = R_HC[a, b]
                for c in range(nc - 1, -1, -1):
                    i = head_chain[c]
                    sux = S[0, 0] * u[0] + S[0, 1] * u[1] + S[0, 2] * u[2]
                    suy = S[1, 0] * u[0] + S[1, 1] * u[1] + S[1, 2] * u[2]
                    suz = S[2, 0] * u[0] + S[2, 1] * u[1] + S[2, 2] * u[2]
                    for a in range(3):
                        g_th[t, i, a] -= pref * (
                            Jr[t, i, 0, a] * sux + Jr[t, i, 1, a] * suy + Jr[t, i, 2, a] * suz
                        )
                    if c > 0:
                        _mm33(Rloc[t, i], S, S2)
                        for a in range(3):
                            for b in range(3):
                                S[a, b] = S2[a, b]

    if w_h > 0.0 and T >= 2:
        for t in range(T - 1):
            _mtm33(H[t], H[t + 1], Q)
            psi = _rel_axis_angle(Q, u)
            sn = np.sqrt(psi * psi + MU2)
            total += w_h * (sn - MU) / (T - 1)
            if compute_grad:
                pref = w_h / (T - 1) * psi / sn
                # left frame t
                for a in range(3):
                    for b in range(3):
                        S[a, b] = 1.0 if a == b else 0.0
                for c in range(nc - 1, -1, -1):
                    i = head_chain[c]
                    sux = S[0, 0] * u[0] + S[0, 1] * u[1] + S[0, 2] * u[2]
                    suy = S[1, 0] * u[0] + S[1, 1] * u[1] + S[1, 2] * u[2]
                    suz = S[2, 0] * u[0] + S[2, 1] * u[1] + S[2, 2] * u[2]
                    for a in range(3):
                        g_th[t, i, a] -= pref * (
                            Jr[t, i, 0, a] * sux + Jr[t, i, 1, a] * suy + Jr[t, i, 2, a] * suz
                        )
                    if c > 0:
                        _mm33(Rloc[t, i], S, S2)
                        for a in range(3):
                            for b in range(3):
                                S[a, b] = S2[a, b]
                # right frame t+1
                for a in range(3):
                    for b in range(3):
                        S[a, b] = 1.0 if a == b else 0.0
                for c in range(nc - 1, -1, -1):
                    i = head_chain[c]
                    sux = S[0, 0] * u[0] + S[0, 1] * u[1] + S[0, 2] * u[2]
                    suy = S[1, 0] * u[0] + S[1, 1] * u[1] + S[1, 2] * u[2]
                    suz = S[2, 0] * u[0] + S[2, 1] * u[1] + S[2, 2] * u[2]
                    for a in range(3):
                        g_th[t + 1, i, a] += pref * (
                            Jr[t + 1, i, 0, a] * sux
                            + Jr[t + 1, i, 1, a] * suy
                            + Jr[t + 1, i, 2, a] * suz
                        )
                    if c > 0:
                        _mm33(Rloc[t + 1, i], S, S2)
                        for a in range(3):
                            for b in range(3):
                                S[a, b] = S2[a, b]

    if w_g > 0.0 and T >= 2:
        for t in range(T - 1):
            _mtm33(Rloc[t, 0], Rloc[t + 1, 0], Q)
            psi = _rel_axis_angle(Q, u)
            sn = np.sqrt(psi * psi + MU2)
            total += w_g * (sn - MU) / (T - 1)
            if compute_grad:
                pref = w_g / (T - 1) * psi / sn
                for a in range(3):
                    g_th[t, 0, a] -= pref * (
                        Jr[t, 0, 0, a] * u[0] + Jr[t, 0, 1, a] * u[1] + Jr[t, 0, 2, a] * u[2]
                    )
                    g_th[t + 1, 0, a] += pref * (
                        Jr[t + 1, 0, 0, a] * u[0]
                        + Jr[t + 1, 0, 1, a] * u[1]
                        + Jr[t + 1, 0, 2, a] * u[2]
                    )

    if w_t > 0.0 and T >= 2:
        for t in range(T - 1):
            dx = trans[t, 0] - trans[t + 1, 0]
            dy = trans[t, 1] - trans[t + 1, 1]
            dz = trans[t, 2] - trans[t + 1, 2]
            sn = np.sqrt(dx * dx + dy * dy + dz * dz + MU2)
            total += w_t * (sn - MU) / (T - 1)
            if compute_grad:
                f = w_t / (T - 1) / sn
                g_t[t, 0] += f * dx
                g_t[t, 1] += f * dy
                g_t[t, 2] += f * dz
                g_t[t + 1, 0] -= f * dx
                g_t[t + 1, 1] -= f * dy
                g_t[t + 1, 2] -= f * dz

    if w_imu > 0.0:
        for t in range(T):
            s2 = 0.0
            for j in range(1, J):
                for a in range(3):
                    d = theta[t, j, a] - theta_imu[t, j, a]
                    s2 += d * d
            sn = np.sqrt(s2 + MU2)
            total += w_imu * (sn - MU) / T
            if compute_grad:
                f = w_imu / T / sn
                for j in range(1, J):
                    for a in range(3):
                        g_th[t, j, a] += f * (theta[t, j, a] - theta_imu[t, j, a])

    return total, g_th, g_t


def objective_and_gradient(theta, trans, prob):
    theta = np.ascontiguousarray(np.asarray(theta, dtype=float).reshape(-1, 24, 3))
    trans = np.ascontiguousarray(np.asarray(trans, dtype=float))
    total, g_th, g_t = objective_kernel(
        theta,
        trans,
        prob.parents,
        prob.offsets,
        prob.scale,
        prob.head_chain,
        prob.m_joints,
        prob.m_locals,
        prob.m_parts,
        prob.part_sizes,
        prob.theta_imu,
        prob.contacts,
        prob.cam_validf,
        prob.cam_R,
        prob.R_HC,
        prob.targets,
        prob.w_self,
        prob.w_contact,
        prob.w_slide,
        prob.w_t,
        prob.w_g,
        prob.w_h,
        prob.w_imu,
        True,
    )
    return total, g_th, g_t


def objective_value(theta, trans, prob):
    theta = np.ascontiguousarray(np.asarray(theta, dtype=float).reshape(-1, 24, 3))
    trans = np.ascontiguousarray(np.asarray(trans, dtype=float))
    total, _, _ = objective_kernel(
        theta,
        trans,
        prob.parents,
        prob.offsets,
        prob.scale,
        prob.head_chain,
        prob.m_joints,
        prob.m_locals,
        prob.m_parts,
        prob.part_sizes,
        prob.theta_imu,
        prob.contacts,
        prob.cam_validf,
        prob.cam_R,
        prob.R_HC,
        prob.targets,
        prob.w_self,
        prob.w_contact,
        prob.w_slide,
        prob.w_t,
        prob.w_g,
        prob.w_h,
        prob.w_imu,
        False,
    )
    return total
