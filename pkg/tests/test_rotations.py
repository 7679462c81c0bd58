import numpy as np
import pytest

from posefusion import rotations as rot


def random_axis_angle(rng, max_angle=np.pi - 1e-3, min_angle=0.0):
    v = rng.normal(size=3)
    v /= np.linalg.norm(v)
    return v * rng.uniform(min_angle, max_angle)


def test_exp_zero_is_identity():
    np.testing.assert_array_equal(rot.exp(np.zeros(3)), np.eye(3))


def test_exp_quarter_turn_about_z_maps_x_to_y():
    R = rot.exp([0.0, 0.0, np.pi / 2])
    np.testing.assert_allclose(R @ np.array([1.0, 0.0, 0.0]), [0.0, 1.0, 0.0], atol=1e-12)


def test_exp_log_roundtrip_1000_samples():
    rng = np.random.default_rng(42)
    for _ in range(1000):
        a = random_axis_angle(rng, max_angle=np.pi - 1e-6)
        b = rot.log(rot.exp(a))
        assert np.linalg.norm(a - b) < 1e-9


def test_log_identity_is_zero():
    np.testing.assert_array_equal(rot.log(np.eye(3)), np.zeros(3))


def test_log_pi_branch_about_x():
    a = rot.log(rot.rot_x(np.pi))
    assert abs(np.linalg.norm(a) - np.pi) < 1e-9
    # axis is +-x
    assert abs(abs(a[0]) - np.pi) < 1e-9
    assert abs(a[1]) < 1e-9 and abs(a[2]) < 1e-9


def test_log_exp_roundtrip_including_near_pi():
    rng = np.random.default_rng(7)
    for _ in range(500):
        a = random_axis_angle(rng, min_angle=1e-4, max_angle=np.pi - 1e-3)
        R = rot.exp(a)
        R2 = rot.exp(rot.log(R))
        assert np.abs(R - R2).max() < 1e-8


def test_log_rejects_non_orthonormal():
    with pytest.raises(ValueError):
        rot.log(np.eye(3) * 1.1)
    with pytest.raises(ValueError):
        rot.log(np.diag([1.0, 1.0, -1.0]))  # det -1


def test_geodesic_distance_trivial_cases():
    R = rot.exp([0.3, -0.2, 0.9])
    assert rot.geodesic_distance(R, R) == pytest.approx(0.0, abs=1e-9)
    assert rot.geodesic_distance(np.eye(3), rot.rot_z(0.3)) == pytest.approx(0.3, abs=1e-12)


def test_geodesic_distance_matches_trace_formula():
    rng = np.random.default_rng(3)
    for _ in range(300):
        R1 = rot.exp(random_axis_angle(rng))
        R2 = rot.exp(random_axis_angle(rng))
        d = rot.geodesic_distance(R1, R2)
        oracle = np.arccos(np.clip((np.trace(R1.T @ R2) - 1) / 2, -1, 1))
        assert abs(d - oracle) < 1e-8


def test_geodesic_symmetry_and_range():
    rng = np.random.default_rng(11)
    for _ in range(100):
        R1 = rot.exp(random_axis_angle(rng))
        R2 = rot.exp(random_axis_angle(rng))
        d12 = rot.geodesic_distance(R1, R2)
        d21 = rot.geodesic_distance(R2, R1)
        assert abs(d12 - d21) < 1e-10
        assert 0.0 <= d12 <= np.pi


def test_geodesic_triangle_inequality():
    rng = np.random.default_rng(19)
    for _ in range(200):
        A = rot.exp(random_axis_angle(rng))
        B = rot.exp(random_axis_angle(rng))
        C = rot.exp(random_axis_angle(rng))
        assert rot.geodesic_distance(A, C) <= (
            rot.geodesic_distance(A, B) + rot.geodesic_distance(B, C) + 1e-7
        )


def test_geodesic_left_invariance():
    rng = np.random.default_rng(23)
    for _ in range(100):
        Q = rot.exp(random_axis_angle(rng))
        R1 = rot.exp(random_axis_angle(rng))
        R2 = rot.exp(random_axis_angle(rng))
        assert abs(
            rot.geodesic_distance(Q @ R1, Q @ R2) - rot.geodesic_distance(R1, R2)
        ) < 1e-8


def test_hat_vee_roundtrip():
    rng = np.random.default_rng(1)
    v = rng.normal(size=3)
    np.testing.assert_allclose(rot.vee(rot.hat(v)), v)
    H = rot.hat(v)
    np.testing.assert_allclose(H.T, -H)


def test_right_jacobian_first_order_property():
    rng = np.random.default_rng(5)
    for _ in range(100):
        a = random_axis_angle(rng, min_angle=0.05, max_angle=2.5)
        d = rng.normal(size=3) * 1e-7
        lhs = rot.exp(a + d)
        rhs = rot.exp(a) @ rot.exp(rot.right_jacobian(a) @ d)
        assert np.abs(lhs - rhs).max() < 1e-12


def test_quaternion_roundtrip():
    rng = np.random.default_rng(9)
    for _ in range(200):
        R = rot.exp(random_axis_angle(rng))
        R2 = rot.from_quat_wxyz(rot.to_quat_wxyz(R))
        assert np.abs(R - R2).max() < 1e-12


def test_batched_agree_with_scalar():
    rng = np.random.default_rng(13)
    a = np.array([random_axis_angle(rng) for _ in range(64)])
    a[0] = 0.0
    a[1] = [1e-9, 0, 0]
    R = rot.exp_many(a)
    for i in range(len(a)):
        np.testing.assert_allclose(R[i], rot.exp(a[i]), atol=1e-14)
    back = rot.log_many(R)
    for i in range(len(a)):
        np.testing.assert_allclose(back[i], rot.log(R[i], validate=False), atol=1e-12)
    Jr = rot.right_jacobian_many(a)
    for i in range(len(a)):
        np.testing.assert_allclose(Jr[i], rot.right_jacobian(a[i]), atol=1e-14)


def test_relative_angles_matches_geodesic():
    rng = np.random.default_rng(17)
    Ra = rot.exp_many(np.array([random_axis_angle(rng) for _ in range(32)]))
    Rb = rot.exp_many(np.array([random_axis_angle(rng) for _ in range(32)]))
    psi, axis = rot.relative_angles(Ra, Rb)
    for i in range(32):
        assert psi[i] == pytest.approx(rot.geodesic_distance(Ra[i], Rb[i]), abs=1e-10)
        assert np.linalg.norm(axis[i]) == pytest.approx(1.0, abs=1e-9)
    # identical pair: zero angle, zero axis
    psi0, axis0 = rot.relative_angles(Ra[:1], Ra[:1])
    assert psi0[0] < 1e-7
    assert np.linalg.norm(axis0[0]) < 1.0 + 1e-9
