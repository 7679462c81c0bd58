import numpy as np
import pytest

from posefusion.body import load_skeleton, markers_batch
from posefusion.config import FusionConfig
from posefusion.scene import build_index
from posefusion.simulate import (
    CameraCorruption,
    ImuCorruption,
    PathSpec,
    SimError,
    SimSpec,
    contact_schedule,
    generate,
    load_spec,
    save_spec,
    spec_from_dict,
)
from posefusion.terms import evaluate_objective, pack_vars

SK = load_skeleton()


def small_scene_spec(**kw):
    defaults = dict(duration=5.0, rate_hz=30.0, seed=0)
    defaults.update(kw)
    spec = SimSpec(**defaults)
    spec.scene.extent = 6.0
    spec.scene.spacing = 0.05
    return spec


class TestGenerate:
    def test_zero_corruption_bit_exact(self):
        b = generate(small_scene_spec(path=PathSpec(type="line", speed=0.9)))
        np.testing.assert_array_equal(b.clean.theta_imu, b.corrupted.theta_imu)
        np.testing.assert_array_equal(b.clean.t_imu, b.corrupted.t_imu)
        np.testing.assert_array_equal(b.clean.cam_t, b.corrupted.cam_t)
        np.testing.assert_array_equal(b.clean.cam_R, b.corrupted.cam_R)

    def test_deterministic_under_seed(self):
        spec = small_scene_spec(
            path=PathSpec(type="circle", speed=0.9, radius=2.5),
            imu=ImuCorruption(yaw_drift=0.01, trans_drift=0.01),
            camera=CameraCorruption(pos_noise=0.01, outlier_rate=0.1),
            seed=7,
        )
        a = generate(spec)
        b = generate(spec)
        np.testing.assert_array_equal(a.corrupted.theta_imu, b.corrupted.theta_imu)
        np.testing.assert_array_equal(a.corrupted.cam_t, b.corrupted.cam_t)
        np.testing.assert_array_equal(a.corrupted.cam_valid, b.corrupted.cam_valid)
        np.testing.assert_array_equal(a.scene.points, b.scene.points)

    def test_yaw_drift_accumulates_linearly(self):
        # 0.01 rad/s for 100 s -> final root yaw off by 1.0 rad
        spec = SimSpec(
            path=PathSpec(type="line", speed=0.0),
            duration=100.0,
            rate_hz=10.0,
            imu=ImuCorruption(yaw_drift=0.01),
            seed=1,
        )
        spec.scene.extent = 4.0
        spec.scene.spacing = 0.05
        b = generate(spec)
        from posefusion import rotations as rot

        R_clean = rot.exp(b.clean.theta_imu[-1, :3])
        R_drift = rot.exp(b.corrupted.theta_imu[-1, :3])
        ang = rot.geodesic_distance(R_clean, R_drift)
        expected = 0.01 * (len(b.clean) - 1) / 10.0
        assert ang == pytest.approx(expected, abs=1e-9)

    def test_outlier_count_binomial_bound(self):
        spec = SimSpec(
            path=PathSpec(type="line", speed=0.9),
            duration=100.0,
            rate_hz=30.0,
            camera=CameraCorruption(outlier_rate=0.1, outlier_mag=5.0),
            seed=3,
        )
        spec.scene.extent = 6.0
        spec.scene.spacing = 0.1
        b = generate(spec)
        moved = np.linalg.norm(b.corrupted.cam_t - b.clean.cam_t, axis=1) > 1.0
        n = len(b.clean)
        # binomial 95% bound around n * 0.1
        sigma = np.sqrt(n * 0.1 * 0.9)
        assert abs(moved.sum() - 0.1 * n) < 2 * sigma + 1

    def test_corruption_orthogonality(self):
        base = dict(path=PathSpec(type="line", speed=0.9), duration=4.0, rate_hz=30.0, seed=5)
        cam_only = generate(
            small_scene_spec(camera=CameraCorruption(pos_noise=0.02, dropout_rate=0.1), **base)
        )
        np.testing.assert_array_equal(cam_only.clean.theta_imu, cam_only.corrupted.theta_imu)
        np.testing.assert_array_equal(cam_only.clean.t_imu, cam_only.corrupted.t_imu)
        imu_only = generate(
            small_scene_spec(imu=ImuCorruption(yaw_drift=0.05), **base)
        )
        np.testing.assert_array_equal(imu_only.clean.cam_t, imu_only.corrupted.cam_t)
        np.testing.assert_array_equal(imu_only.clean.cam_R, imu_only.corrupted.cam_R)

    def test_clean_objective_zero_at_truth(self):
        for path in (PathSpec(type="line", speed=0.9), PathSpec(type="line", speed=0.0)):
            b = generate(small_scene_spec(path=path))
            idx = build_index(b.scene)
            seq = b.clean
            vars_ = pack_vars(seq.theta_imu, seq.t_imu)
            total, bd = evaluate_objective(vars_, seq, FusionConfig(), SK, idx, np.eye(3))
            for key in ("self", "contact", "slide", "smooth_g", "smooth_h", "imu"):
                assert bd[key] < 1e-8, (path.speed, key, bd[key])

    def test_unreachable_gait_raises(self):
        spec = small_scene_spec(path=PathSpec(type="line", speed=2.5))
        with pytest.raises(SimError, match="reach"):
            generate(spec)

    def test_waypoints_path(self):
        spec = small_scene_spec(
            path=PathSpec(type="waypoints", speed=0.8, waypoints=[(0, 0), (2, 0), (2, 2)]),
            duration=6.0,
        )
        b = generate(spec)
        # 4 m polyline at 0.8 m/s ends after 5 s; position clamps at the end
        assert np.linalg.norm(b.clean.t_imu[-1, :2] - [2, 2]) < 0.2

    def test_dropout_marks_camera_invalid(self):
        spec = small_scene_spec(camera=CameraCorruption(dropout_rate=0.2), seed=11)
        b = generate(spec)
        assert not b.corrupted.cam_valid.all()
        assert b.clean.cam_valid.all()


class TestContacts:
    def test_standing_all_contacts(self):
        b = generate(small_scene_spec(path=PathSpec(type="line", speed=0.0)))
        assert b.clean.contacts.all()

    def test_walking_no_flight_phase(self):
        b = generate(small_scene_spec(path=PathSpec(type="line", speed=0.9)))
        left = b.clean.contacts[:, :2].any(axis=1)
        right = b.clean.contacts[:, 2:].any(axis=1)
        assert (left | right).all()

    def test_flags_agree_with_marker_geometry(self):
        spec = small_scene_spec(path=PathSpec(type="line", speed=0.9))
        flags = contact_schedule(spec)
        b = generate(spec)
        np.testing.assert_array_equal(flags, b.clean.contacts)
        P = markers_batch(SK, b.clean.theta_imu, b.clean.t_imu)
        parts = SK.flat_markers()[2]
        n = len(b.clean)
        per_part = P.reshape(n, 4, -1, 3).mean(axis=2)
        height_ok = per_part[:, :, 2] < 1e-3
        speed = np.zeros((n, 4))
        speed[1:] = np.linalg.norm(np.diff(per_part[:, :, :2], axis=0), axis=2)
        expected = height_ok & (speed < 1e-2)
        np.testing.assert_array_equal(flags, expected)

    def test_contact_markers_exactly_planted(self):
        b = generate(small_scene_spec(path=PathSpec(type="circle", speed=0.9, radius=2.5)))
        seq = b.clean
        P = markers_batch(SK, seq.theta_imu, seq.t_imu)
        parts = SK.flat_markers()[2]
        for t in range(len(seq) - 1):
            for k in range(4):
                if seq.contacts[t, k] and seq.contacts[t + 1, k]:
                    sel = parts == k
                    assert np.abs(P[t, sel] - P[t + 1, sel]).max() < 1e-12


def test_spec_json_roundtrip(tmp_path):
    spec = SimSpec(
        path=PathSpec(type="circle", speed=0.7, radius=3.0),
        duration=12.0,
        rate_hz=20.0,
        imu=ImuCorruption(yaw_drift=0.01),
        camera=CameraCorruption(outlier_rate=0.05),
        seed=42,
    )
    p = tmp_path / "spec.json"
    save_spec(spec, p)
    back = load_spec(p)
    assert back == spec


def test_spec_validation():
    with pytest.raises(SimError):
        spec_from_dict({"camera": {"outlier_rate": 1.5}})
    with pytest.raises(SimError):
        spec_from_dict({"path": {"type": "zigzag"}})
    with pytest.raises(SimError):
        spec_from_dict({"duration": -1.0})
