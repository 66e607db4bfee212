import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from plumeswarm.hull import ConvexHull3D
from plumeswarm.plume_field import (Box, Emitter, EmptyField, PlumeFieldParams, SolidBox,
                                    WindStep, analytic_extent)
from plumeswarm.reconstruction import (EmptyIntersection, InsufficientCoverage,
                                       NonPositiveDiameter, PointCloud, View, VoxelGrid,
                                       VoxelReconstructor, crop_enclosure, export_point_cloud,
                                       load_grid, read_ply, save_grid, scale_to_world,
                                       trajectory_circle, write_ply)
from plumeswarm.sensing import CameraIntrinsics, CameraPose, render

BASE_INTR = CameraIntrinsics.centered(1000.0, 1280, 720)


def ring_views(field, scale, n, radius=21.0, height=10.0, look=(0.0, 0.0, 1.0), t=0.0, arc=360.0):
    intr = BASE_INTR.scaled(scale)
    out = []
    for k in range(n):
        a = np.radians(arc * k / n)
        pose = CameraPose.look_at((look[0] + radius * np.cos(a), look[1] + radius * np.sin(a),
                                   height), look)
        out.append(View(render(intr, pose, field, t), intr, pose))
    return out


def random_grid(seed, dims=(6, 5, 4)):
    rng = np.random.default_rng(seed)
    sigma = np.where(rng.random(dims) < 0.4, rng.uniform(0, 3, dims), 0.0)
    return VoxelGrid(rng.normal(size=3), 0.5, sigma, rng.random(dims + (3,)))


def test_grid_validation():
    with pytest.raises(ValueError):
        VoxelGrid((0, 0, 0), 1.0, -np.ones((2, 2, 2)), None)
    with pytest.raises(ValueError):
        VoxelGrid((0, 0, 0), 1.0, np.zeros((0, 2, 2)), None)


def test_empty_scene_exports_nothing():
    views = ring_views(EmptyField(), 1 / 16, 12)
    est = VoxelReconstructor(max_dim=16, iterations=10).fit(views, Box((-3, -3, 0), (3, 3, 4)))
    assert len(export_point_cloud(est.grid_, 0.3)) == 0


def test_coverage_checks():
    cube = SolidBox((-1, -1, 0), (1, 1, 2))
    arc = ring_views(cube, 1 / 16, 8, arc=90.0)
    with pytest.raises(InsufficientCoverage):
        VoxelReconstructor().fit(arc, Box((-2, -2, 0), (2, 2, 2)))
    with pytest.raises(InsufficientCoverage):
        VoxelReconstructor().fit(ring_views(cube, 1 / 16, 4), Box((-2, -2, 0), (2, 2, 2)))


@pytest.fixture(scope="module")
def puff_fit():
    em = Emitter((1.0, 0.5, 2.0), rate=1.0, on_time=0.5, off_time=1e6, radius=0.6, growth=0.0,
                 amplitude=4.0, lifetime=100.0)
    field = PlumeFieldParams((em,), (WindStep(0.0, 0.0, 0.0),))
    views = ring_views(field, 1 / 8, 32, look=(1.0, 0.5, 2.0))
    enclosure = analytic_extent(field, 0.0, 0.01).inflate(0.1)
    est = VoxelReconstructor(max_dim=24, iterations=60).fit(views, enclosure)
    return est, views, enclosure


def test_puff_argmax_within_one_voxel(puff_fit):
    est, _, _ = puff_fit
    g = est.grid_
    ijk = np.array(np.unravel_index(np.argmax(g.sigma), g.dims))
    center = g.origin + (ijk + 0.5) * g.voxel_size
    assert np.all(np.abs(center - np.array([1.0, 0.5, 2.0])) <= g.voxel_size)


def test_objective_monotone_and_photometric(puff_fit):
    est, views, _ = puff_fit
    obj = np.array(est.report_.objective)
    assert np.all(np.diff(obj) <= 0)
    assert est.report_.photometric_ok
    assert np.all(est.photometric_errors(views) <= 0.08)


def test_fit_is_deterministic(puff_fit):
    est, views, enclosure = puff_fit
    again = VoxelReconstructor(max_dim=24, iterations=60).fit(views, enclosure)
    assert np.array_equal(again.grid_.sigma, est.grid_.sigma)
    assert np.array_equal(again.grid_.rgb, est.grid_.rgb)


def test_estimator_params():
    est = VoxelReconstructor(max_dim=10)
    assert est.get_params()["max_dim"] == 10
    assert est.set_params(iterations=3).iterations == 3


@pytest.mark.slow
def test_cube_iou():
    cube = SolidBox((-1, -1, 0), (1, 1, 2))
    views = ring_views(cube, 0.25, 64)
    est = VoxelReconstructor(max_dim=32).fit(views, Box((-4, -4, 0), (4, 4, 4)))
    g = est.grid_
    assert g.voxel_size == pytest.approx(0.25)
    truth = cube.box.contains(g.centers())
    occ = g.sigma.reshape(-1) > 0.5
    assert (occ & truth).sum() / (occ | truth).sum() >= 0.7


def test_crop_identity_and_half():
    g = random_grid(1)
    same = crop_enclosure(g, g.box.inflate(1.0))
    assert np.array_equal(same.sigma, g.sigma) and np.array_equal(same.rgb, g.rgb)
    lo, hi = g.box.lo, g.box.hi
    mid = 0.5 * (lo[2] + hi[2])
    half = crop_enclosure(g, Box(tuple(lo), (hi[0], hi[1], mid)))
    assert not half.sigma[:, :, 2:].any()
    assert np.array_equal(half.sigma[:, :, :2], g.sigma[:, :, :2])
    with pytest.raises(EmptyIntersection):
        crop_enclosure(g, Box((100, 100, 100), (101, 101, 101)))


def test_crop_keeps_plume_mass():
    field = PlumeFieldParams((Emitter((0.0, 0.0, 0.0)),), (WindStep(0.0, 1.0, 0.3),), buoyancy=0.2)
    t = 12.0
    box = analytic_extent(field, t).inflate(0.5)
    g = VoxelGrid.covering(box, 40)
    sigma, _ = field.sample(g.centers(), t)
    g = VoxelGrid(g.origin, g.voxel_size, sigma.reshape(g.dims), None)
    cropped = crop_enclosure(g, analytic_extent(field, t, 1e-3).inflate(0.1))
    assert cropped.sigma.sum() >= 0.99 * g.sigma.sum()


def test_export_examples():
    assert len(export_point_cloud(VoxelGrid((0, 0, 0), 1.0, np.zeros((3, 3, 3)), None), 0.1)) == 0
    sigma = np.zeros((3, 3, 3))
    sigma[1, 2, 0] = 5.0
    cloud = export_point_cloud(VoxelGrid((10, 0, 0), 2.0, sigma, None), 0.1)
    assert cloud.points.tolist() == [[13.0, 5.0, 1.0]]
    assert cloud.units == "reconstruction"
    with pytest.raises(ValueError):
        export_point_cloud(VoxelGrid((0, 0, 0), 1.0, sigma, None), 0.0)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.05, 2.5))
def test_export_count_matches_scan(seed, threshold):
    g = random_grid(seed)
    want = sum(1 for i, j, k in itertools.product(*map(range, g.dims)) if g.sigma[i, j, k] > threshold)
    assert len(export_point_cloud(g, threshold)) == want


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.05, 2.5))
def test_crop_then_export_commutes(seed, threshold):
    g = random_grid(seed)
    rng = np.random.default_rng(seed + 1)
    a, b = rng.uniform(g.box.lo, g.box.hi, (2, 3))
    enc = Box(tuple(np.minimum(a, b)), tuple(np.maximum(a, b)))
    if g.box.intersect(enc).is_empty:
        return
    one = export_point_cloud(crop_enclosure(g, enc), threshold)
    full = export_point_cloud(g, threshold)
    two = full.subset(enc.contains(full.points))
    assert np.array_equal(one.points, two.points)
    assert np.array_equal(one.colors, two.colors)


def test_scale_examples():
    rng = np.random.default_rng(2)
    cloud = PointCloud(rng.normal(size=(20, 3)), rng.random((20, 3)))
    same = scale_to_world(cloud, 3.0, 3.0)
    assert np.array_equal(same.points, cloud.points) and same.units == "world"
    c = np.array([1.0, -2.0, 0.5])
    big = scale_to_world(cloud, 2.0, 42.0, c)
    d0 = np.linalg.norm(cloud.points[:, None] - cloud.points[None], axis=-1)
    d1 = np.linalg.norm(big.points[:, None] - big.points[None], axis=-1)
    assert d1 == pytest.approx(21.0 * d0, rel=1e-12)
    assert big.points == pytest.approx(c + 21.0 * (cloud.points - c))
    with pytest.raises(NonPositiveDiameter):
        scale_to_world(cloud, 0.0, 1.0)


def test_scale_cubes_hull_volume():
    pts = np.random.default_rng(5).normal(size=(40, 3))
    v0 = ConvexHull3D(pts).volume
    v1 = ConvexHull3D(scale_to_world(PointCloud(pts, np.zeros_like(pts)), 1.0, 3.0).points).volume
    assert v1 == pytest.approx(27 * v0, rel=1e-9)


def test_trajectory_circle_fit():
    a = np.linspace(0, 2 * np.pi, 50, endpoint=False)
    pts = np.column_stack([3 + 7 * np.cos(a), -1 + 7 * np.sin(a), np.full(50, 2.0)])
    center, diameter, normal = trajectory_circle(pts)
    assert center == pytest.approx((3, -1, 2))
    assert diameter == pytest.approx(14.0)
    assert abs(normal[2]) == pytest.approx(1.0)


def test_ply_round_trip(tmp_path):
    cloud = PointCloud([[1.5, -2.0, 3.25], [0, 0, 0]], [[1.0, 0.0, 0.5], [0.2, 0.4, 0.6]], "world")
    write_ply(tmp_path / "c.ply", cloud)
    text = (tmp_path / "c.ply").read_text()
    assert text.startswith("ply\nformat ascii 1.0\n")
    for prop in ("x", "y", "z"):
        assert f"property float {prop}" in text
    for prop in ("red", "green", "blue"):
        assert f"property uchar {prop}" in text
    back = read_ply(tmp_path / "c.ply")
    assert back.units == "world"
    assert np.allclose(back.points, cloud.points)
    assert np.allclose(back.colors, cloud.colors, atol=1 / 255)


def test_grid_checkpoint_round_trip(tmp_path):
    g = random_grid(3)
    save_grid(tmp_path / "g.psvg", g)
    back = load_grid(tmp_path / "g.psvg")
    assert back.dims == g.dims and back.voxel_size == g.voxel_size
    assert np.array_equal(back.origin, g.origin)
    assert np.allclose(back.sigma, g.sigma.astype(np.float32))
    assert np.allclose(back.rgb, g.rgb.astype(np.float32))
    (tmp_path / "bad").write_bytes(b"XXXX")
    with pytest.raises(ValueError):
        load_grid(tmp_path / "bad")
