import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from plumeswarm.plume_metrics import (EmptyCloud, UndefinedDirection, angle_of_deviation,
                                      average_height, convex_hull_volume, dominant_period,
                                      metrics_timeseries, read_metrics_table, write_metrics_table)
from plumeswarm.reconstruction import PointCloud


def world(pts):
    pts = np.asarray(pts, float)
    return PointCloud(pts, np.zeros_like(pts), "world")


def test_aod_examples():
    sym = [[3, 1, 0], [3, -1, 0], [5, 2, 1], [5, -2, 1]]
    assert angle_of_deviation(sym) == pytest.approx(0.0, abs=1e-12)
    assert angle_of_deviation([[0, 2, 0], [0, 5, 3]]) == pytest.approx(90.0)
    assert angle_of_deviation([[0.5, 1.5, 0], [1.5, 0.5, 2]]) == pytest.approx(45.0, abs=1e-9)
    assert angle_of_deviation([[-1, 0, 0]]) == 180.0
    assert angle_of_deviation([[7, 8, 0]], origin=(6, 7)) == pytest.approx(45.0, abs=1e-9)
    assert angle_of_deviation([[0, 1, 0]], reference=(0, 1)) == pytest.approx(0.0)


def test_aod_errors():
    with pytest.raises(UndefinedDirection):
        angle_of_deviation([[1, 0, 0], [-1, 0, 5]])
    with pytest.raises(EmptyCloud):
        angle_of_deviation(np.zeros((0, 3)))


def test_height_examples():
    assert average_height([[0, 0, 2.5]] * 4) == 2.5
    assert average_height([[0, 0, 0], [1, 1, 2]] * 3) == pytest.approx(1.0)
    pts = np.random.default_rng(0).uniform([0, 0, 0], [3, 3, 10], (100_000, 3))
    assert average_height(pts) == pytest.approx(5.0, abs=0.05)
    with pytest.raises(EmptyCloud):
        average_height(np.zeros((0, 3)))


def test_hull_volume_examples():
    cube = np.array([[i, j, k] for i in (0, 1) for j in (0, 1) for k in (0, 1)], float)
    assert convex_hull_volume(cube) == pytest.approx(1.0)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31), st.floats(-180, 180), st.floats(0.1, 100))
def test_aod_rotation_and_scale(seed, phi, s):
    rng = np.random.default_rng(seed)
    pts = rng.normal(loc=(4, 1, 2), size=(20, 3))
    base = angle_of_deviation(pts)
    c, si = math.cos(math.radians(phi)), math.sin(math.radians(phi))
    rot = pts @ np.array([[c, -si, 0], [si, c, 0], [0, 0, 1]]).T
    diff = (angle_of_deviation(rot) - base - phi + 180) % 360 - 180
    assert abs(diff) < 1e-9
    assert angle_of_deviation(s * pts) == pytest.approx(base, abs=1e-9)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31), st.floats(-100, 100))
def test_height_translation(seed, dz):
    pts = np.random.default_rng(seed).normal(size=(25, 3))
    moved = pts + np.array([0, 0, dz])
    assert average_height(moved) == pytest.approx(average_height(pts) + dz, abs=1e-9)


def test_timeseries_flags_and_order():
    rng = np.random.default_rng(1)
    blob = rng.normal(loc=(5, 0, 3), size=(40, 3))
    flat = blob.copy()
    flat[:, 2] = 1.0
    series = metrics_timeseries([world(blob), world(np.zeros((0, 3))), world(blob[:3]),
                                 world(flat)], t_starts=[0, 2, 4, 6])
    assert [m.segment for m in series] == [0, 1, 2, 3]
    assert series[0].flags == [] and series[0].volume > 0
    assert series[1].flags == ["empty"] and series[1].volume == 0.0
    assert series[2].flags == ["too_few_points"]
    assert series[3].flags == ["degenerate"] and series[3].height == 1.0
    with pytest.raises(ValueError):
        metrics_timeseries([PointCloud(blob, np.zeros_like(blob))])


def test_constant_and_empty_series():
    blob = world(np.random.default_rng(2).normal(loc=(5, 5, 3), size=(30, 3)))
    s = metrics_timeseries([blob] * 5)
    assert len({(m.volume, m.aod, m.height) for m in s}) == 1
    empties = metrics_timeseries([world(np.zeros((0, 3)))] * 3)
    assert all(m.flags == ["empty"] for m in empties)


def test_table_round_trip(tmp_path):
    blob = world(np.random.default_rng(3).normal(loc=(5, 5, 3), size=(30, 3)))
    s = metrics_timeseries([blob, world(np.zeros((0, 3)))], t_starts=[0.0, 2.0])
    write_metrics_table(tmp_path / "m.tsv", s)
    back = read_metrics_table(tmp_path / "m.tsv")
    assert back[0].volume == pytest.approx(s[0].volume, abs=1e-6)
    assert back[1].flags == ["empty"]
    header = (tmp_path / "m.tsv").read_text().splitlines()[0].split("\t")
    assert header == ["segment", "t_start", "volume_m3", "aod_deg", "height_m", "points", "flags"]


def test_dominant_period_on_sampled_sine():
    t = np.arange(77) * 2.0
    x = 3 + np.sin(2 * np.pi * t / 24.0) + 0.1 * np.random.default_rng(4).normal(size=77)
    assert dominant_period(x, 2.0) == pytest.approx(24.0, abs=2.0)
