import json

import numpy as np
import pytest

from posefusion.scene import (
    SceneError,
    ScenePointCloud,
    build_index,
    load_scene,
    plane_grid,
    save_scene,
)


def brute_force_nn(points, p):
    d = np.linalg.norm(points - p, axis=1)
    i = int(np.argmin(d))
    return points[i], d[i]


def test_cloud_validation():
    with pytest.raises(SceneError):
        ScenePointCloud(points=np.zeros((0, 3)))
    with pytest.raises(SceneError):
        ScenePointCloud(points=np.array([[0.0, np.nan, 0.0]]))
    with pytest.raises(SceneError):
        ScenePointCloud(points=np.zeros((4, 2)))


def test_single_point_cloud():
    idx = build_index(ScenePointCloud(points=np.array([[1.0, 2.0, 3.0]])))
    pt, d = idx.closest_point([0.0, 0.0, 0.0])
    np.testing.assert_array_equal(pt, [1.0, 2.0, 3.0])
    assert d == pytest.approx(np.sqrt(14.0))


def test_queries_match_brute_force_on_random_cloud():
    rng = np.random.default_rng(0)
    pts = rng.uniform(-1, 1, size=(100_000, 3))
    idx = build_index(ScenePointCloud(points=pts))
    probes = rng.uniform(-1.2, 1.2, size=(1000, 3))
    targets, dists = idx.closest_points(probes)
    for i in range(0, 1000, 37):
        _, d_ref = brute_force_nn(pts, probes[i])
        assert dists[i] == pytest.approx(d_ref, abs=1e-12)
    # full check on a smaller subset
    for i in range(50):
        pt, d = idx.closest_point(probes[i])
        pt_ref, d_ref = brute_force_nn(pts, probes[i])
        assert d == pytest.approx(d_ref, abs=1e-12)
        assert np.linalg.norm(pt - probes[i]) == pytest.approx(d, abs=1e-12)


def test_duplicate_points_distance_unique():
    pts = np.array([[0.0, 0.0, 0.0], [0.0, 0.0, 0.0], [1.0, 0.0, 0.0]])
    idx = build_index(ScenePointCloud(points=pts))
    pt, d = idx.closest_point([0.1, 0.0, 0.0])
    assert d == pytest.approx(0.1)
    np.testing.assert_array_equal(pt, [0.0, 0.0, 0.0])


def test_probe_on_scene_point_has_zero_distance():
    rng = np.random.default_rng(2)
    pts = rng.normal(size=(500, 3))
    idx = build_index(ScenePointCloud(points=pts))
    _, d = idx.closest_point(pts[123])
    assert d == 0.0


def test_plane_grid_geometry():
    cloud = plane_grid(extent=1.0, spacing=0.01)
    idx = build_index(cloud)
    _, d = idx.closest_point([0.0, 0.0, 0.05])
    assert d == pytest.approx(0.05, abs=1e-12)


def test_index_distance_bounded_by_sampled_points():
    rng = np.random.default_rng(4)
    pts = rng.normal(size=(5000, 3))
    idx = build_index(ScenePointCloud(points=pts))
    for _ in range(20):
        probe = rng.normal(size=3) * 1.5
        _, d = idx.closest_point(probe)
        sample = pts[rng.choice(5000, size=100, replace=False)]
        assert d <= np.linalg.norm(sample - probe, axis=1).min() + 1e-12


PLY_3V = """ply
format ascii 1.0
element vertex 3
property float x
property float y
property float z
end_header
0 0 0
1.5 0 0
0 2.25 -1
"""


def test_load_ascii_ply(tmp_path):
    p = tmp_path / "tri.ply"
    p.write_text(PLY_3V)
    cloud = load_scene(p)
    np.testing.assert_allclose(
        cloud.points, [[0, 0, 0], [1.5, 0, 0], [0, 2.25, -1]]
    )


def test_load_ply_with_normals_and_extra_element(tmp_path):
    text = """ply
format ascii 1.0
comment made by hand
element vertex 2
property float x
property float y
property float z
property float nx
property float ny
property float nz
element face 1
property list uchar int vertex_indices
end_header
0 0 0 0 0 1
1 0 0 0 0 1
3 0 1 0
"""
    p = tmp_path / "n.ply"
    p.write_text(text)
    cloud = load_scene(p)
    assert cloud.points.shape == (2, 3)
    np.testing.assert_allclose(cloud.normals, [[0, 0, 1], [0, 0, 1]])


def test_truncated_ply_names_element(tmp_path):
    text = PLY_3V.replace("element vertex 3", "element vertex 5")
    p = tmp_path / "short.ply"
    p.write_text(text)
    with pytest.raises(SceneError, match="vertex"):
        load_scene(p)


def test_ply_missing_end_header(tmp_path):
    p = tmp_path / "bad.ply"
    p.write_text("ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\n")
    with pytest.raises(SceneError, match="end_header"):
        load_scene(p)


def test_ply_non_finite_coordinates(tmp_path):
    p = tmp_path / "nan.ply"
    p.write_text(PLY_3V.replace("1.5 0 0", "nan 0 0"))
    with pytest.raises(SceneError, match="finite"):
        load_scene(p)


def test_json_roundtrip_bit_exact(tmp_path):
    rng = np.random.default_rng(6)
    cloud = ScenePointCloud(points=rng.normal(size=(50, 3)))
    p = tmp_path / "cloud.json"
    save_scene(cloud, p)
    back = load_scene(p)
    np.testing.assert_array_equal(back.points, cloud.points)


def test_json_missing_points_key(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text(json.dumps({"vertices": []}))
    with pytest.raises(SceneError, match="points"):
        load_scene(p)


def test_missing_file():
    with pytest.raises(SceneError, match="no_such"):
        load_scene("/tmp/no_such_scene_file.json")
