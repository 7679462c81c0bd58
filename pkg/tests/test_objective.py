"""Finite-difference and consistency checks for the fused objective/gradient."""

import numpy as np
import pytest

from posefusion import rotations as rot
from posefusion.body import load_skeleton
from posefusion.config import FusionConfig
from posefusion.objective import BatchProblem, build_problem, objective_and_gradient, objective_value
from posefusion.scene import ScenePointCloud, build_index
from posefusion.sequence import Sequence
from posefusion.terms import evaluate_objective, pack_vars

SK = load_skeleton()


def random_problem(rng, T=5, weights=None, drop_cam=0):
    theta_imu = rng.normal(size=(T, 72)) * 0.3
    contacts = rng.integers(0, 2, size=(T, 4)).astype(float)
    cam_valid = np.ones(T)
    for i in rng.choice(T, size=drop_cam, replace=False):
        cam_valid[i] = 0.0
    cam_R = rot.exp_many(rng.normal(size=(T, 3)))
    R_HC = rot.exp(rng.normal(size=3) * 0.5)
    targets = rng.normal(size=(T, 16, 3))
    if weights is None:
        weights = FusionConfig().weights_dict()
    return build_problem(
        SK, theta_imu, contacts, cam_valid, cam_R, R_HC, targets, weights
    )


def fd_gradient(theta, trans, prob, eps=1e-6):
    T = theta.shape[0]
    x = np.concatenate([theta.reshape(-1), trans.reshape(-1)])
    g = np.empty_like(x)
    for d in range(x.size):
        xp = x.copy()
        xp[d] += eps
        xm = x.copy()
        xm[d] -= eps
        fp = objective_value(xp[: 72 * T].reshape(T, 72), xp[72 * T :].reshape(T, 3), prob)
        fm = objective_value(xm[: 72 * T].reshape(T, 72), xm[72 * T :].reshape(T, 3), prob)
        g[d] = (fp - fm) / (2 * eps)
    return g


def test_gradient_matches_finite_differences_full_objective():
    rng = np.random.default_rng(0)
    for trial in range(4):
        prob = random_problem(rng, T=4, drop_cam=1)
        theta = rng.normal(size=(4, 72)) * 0.4
        trans = rng.normal(size=(4, 3))
        total, g_th, g_t = objective_and_gradient(theta, trans, prob)
        g = np.concatenate([g_th.reshape(-1), g_t.reshape(-1)])
        g_fd = fd_gradient(theta, trans, prob)
        rel = np.linalg.norm(g - g_fd) / max(np.linalg.norm(g_fd), 1e-12)
        assert rel < 1e-4, f"trial {trial}: rel error {rel}"


@pytest.mark.parametrize(
    "keep",
    ["w_s", "w_c", "w_v", "w_T", "w_G", "w_H", "w_p"],
)
def test_gradient_per_term(keep):
    rng = np.random.default_rng(hash(keep) % 2**31)
    weights = {k: 0.0 for k in FusionConfig().weights_dict()}
    weights[keep] = 1.0
    if keep in ("w_c", "w_v"):
        weights["w_sc"] = 1.0
    if keep in ("w_T", "w_G", "w_H"):
        weights["w_sm"] = 1.0
    prob = random_problem(rng, T=4, weights=weights)
    theta = rng.normal(size=(4, 72)) * 0.4
    trans = rng.normal(size=(4, 3))
    total, g_th, g_t = objective_and_gradient(theta, trans, prob)
    assert np.isfinite(total)
    g = np.concatenate([g_th.reshape(-1), g_t.reshape(-1)])
    g_fd = fd_gradient(theta, trans, prob)
    denom = max(np.linalg.norm(g_fd), 1e-10)
    rel = np.linalg.norm(g - g_fd) / denom
    assert rel < 1e-4, f"term {keep}: rel error {rel}"


def test_all_weights_zero_gives_zero():
    rng = np.random.default_rng(1)
    weights = {k: 0.0 for k in FusionConfig().weights_dict()}
    prob = random_problem(rng, T=3, weights=weights)
    theta = rng.normal(size=(3, 72))
    trans = rng.normal(size=(3, 3))
    total, g_th, g_t = objective_and_gradient(theta, trans, prob)
    assert total == 0.0
    assert np.all(g_th == 0.0) and np.all(g_t == 0.0)
    assert objective_value(theta, trans, prob) == 0.0


def test_imu_term_invariant_to_root_triple():
    rng = np.random.default_rng(2)
    weights = {k: 0.0 for k in FusionConfig().weights_dict()}
    weights["w_p"] = 2.0
    prob = random_problem(rng, T=3, weights=weights)
    theta = rng.normal(size=(3, 72))
    trans = np.zeros((3, 3))
    t0 = objective_value(theta, trans, prob)
    theta2 = theta.copy()
    theta2[:, :3] = rng.normal(size=(3, 3)) * 10
    t1 = objective_value(theta2, trans, prob)
    assert t0 == t1
    _, g_th, _ = objective_and_gradient(theta, trans, prob)
    assert np.all(g_th[:, 0] == 0.0)


def test_e_t_gradient_two_frames_pencil_and_paper():
    # With only E_T active and two frames, the gradient w.r.t. trans_1 is
    # the unit vector toward trans_2 times w_sm * w_T / (T-1).
    weights = {k: 0.0 for k in FusionConfig().weights_dict()}
    weights["w_sm"] = 1.0
    weights["w_T"] = 0.5
    rng = np.random.default_rng(3)
    prob = random_problem(rng, T=2, weights=weights)
    theta = np.zeros((2, 72))
    trans = np.array([[0.0, 0.0, 0.0], [1.0, 2.0, 2.0]])
    total, g_th, g_t = objective_and_gradient(theta, trans, prob)
    assert total == pytest.approx(0.5 * 3.0, abs=1e-6)
    d = (trans[0] - trans[1]) / 3.0
    np.testing.assert_allclose(g_t[0], 0.5 * d, atol=1e-9)
    np.testing.assert_allclose(g_t[1], -0.5 * d, atol=1e-9)
    assert np.all(g_th == 0.0)


def make_batch(rng, T, prob):
    ts = np.arange(T) / 30.0
    return Sequence(
        timestamps=ts,
        theta_imu=prob.theta_imu.reshape(T, 72),
        t_imu=np.zeros((T, 3)),
        contacts=prob.contacts.astype(bool),
        cam_valid=prob.cam_validf.astype(bool),
        cam_R=prob.cam_R,
        cam_t=np.zeros((T, 3)),
        rate_hz=30.0,
    )


def test_fused_total_matches_evaluate_objective():
    rng = np.random.default_rng(4)
    cfg = FusionConfig()
    for _ in range(5):
        T = 4
        prob = random_problem(rng, T=T, drop_cam=1)
        batch = make_batch(rng, T, prob)
        theta = rng.normal(size=(T, 72)) * 0.4
        trans = rng.normal(size=(T, 3))
        total_fused, _, _ = objective_and_gradient(theta, trans, prob)
        total_value = objective_value(theta, trans, prob)
        vars_ = pack_vars(theta, trans)
        total_terms, breakdown = evaluate_objective(
            vars_, batch, cfg, SK, None, prob.R_HC, contact_targets=prob.targets
        )
        assert total_fused == pytest.approx(total_terms, rel=1e-12, abs=1e-14)
        assert total_value == pytest.approx(total_terms, rel=1e-12, abs=1e-14)


def test_breakdown_sums_to_total():
    rng = np.random.default_rng(5)
    cfg = FusionConfig()
    T = 4
    prob = random_problem(rng, T=T)
    batch = make_batch(rng, T, prob)
    vars_ = pack_vars(rng.normal(size=(T, 72)) * 0.3, rng.normal(size=(T, 3)))
    total, breakdown = evaluate_objective(
        vars_, batch, cfg, SK, None, prob.R_HC, contact_targets=prob.targets
    )
    from posefusion.terms import WEIGHTED_KEYS

    assert abs(sum(breakdown[k] for k in WEIGHTED_KEYS) - total) < 1e-12
    for k in WEIGHTED_KEYS:
        assert breakdown[k] >= 0.0


def test_contact_term_on_scene_index_matches_frozen_targets():
    rng = np.random.default_rng(6)
    cfg = FusionConfig()
    T = 3
    cloud = ScenePointCloud(points=rng.normal(size=(2000, 3)) * 2)
    idx = build_index(cloud)
    theta = rng.normal(size=(T, 72)) * 0.3
    trans = rng.normal(size=(T, 3))
    from posefusion.body import markers_batch

    P = markers_batch(SK, theta, trans)
    tgt, _ = idx.closest_points(P.reshape(-1, 3))
    tgt = tgt.reshape(P.shape)
    from posefusion.terms import e_contact

    a = e_contact(theta, trans, np.ones((T, 4)), SK, idx)
    b = e_contact(theta, trans, np.ones((T, 4)), SK, None, targets=tgt)
    assert a == pytest.approx(b, rel=1e-15)
