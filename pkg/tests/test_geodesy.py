import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from plumeswarm.geodesy import (EARTH_RADIUS, AffineTransform2D, DegenerateConfiguration, GeoCoord,
                                PolarSingularity, fit_pixel_to_gps, geocoord_to_enu,
                                haversine_distance, image_footprint, offset_geocoord)
from plumeswarm.sensing import CameraIntrinsics

lat = st.floats(-80, 80)
lon = st.floats(-179.9, 179.9)


def test_geocoord_ranges():
    with pytest.raises(ValueError):
        GeoCoord(91.0, 0.0)
    with pytest.raises(ValueError):
        GeoCoord(0.0, 180.0)


def test_haversine_examples():
    a = GeoCoord(40.0, -111.9)
    assert haversine_distance(a, a) == 0.0
    one_degree = haversine_distance(GeoCoord(0, 0), GeoCoord(1, 0))
    assert one_degree == pytest.approx(math.pi * EARTH_RADIUS / 180, abs=1e-6)
    assert one_degree == pytest.approx(111194.9, abs=0.1)


def test_haversine_symmetric_on_random_pairs():
    rng = np.random.default_rng(4)
    for _ in range(100):
        a = GeoCoord(rng.uniform(-89, 89), rng.uniform(-180, 179.99))
        b = GeoCoord(rng.uniform(-89, 89), rng.uniform(-180, 179.99))
        assert haversine_distance(a, b) == haversine_distance(b, a)


def test_offset_examples():
    o = GeoCoord(40.0, -111.9, 3.0)
    assert offset_geocoord(o, 0.0, 0.0) == o
    step = offset_geocoord(GeoCoord(0.0, 0.0), 0.0, 111194.9 / 100)
    assert step.lat == pytest.approx(0.01, abs=1e-6)
    assert haversine_distance(o, offset_geocoord(o, 30.0, 40.0)) == pytest.approx(50.0, abs=0.05)


def test_offset_rejections():
    with pytest.raises(PolarSingularity):
        offset_geocoord(GeoCoord(89.5, 0.0), 1.0, 1.0)
    with pytest.raises(ValueError):
        offset_geocoord(GeoCoord(0.0, 0.0), 10_000.0, 0.0)


def test_enu_round_trip():
    o = GeoCoord(40.0, -111.9)
    p = offset_geocoord(o, 123.4, -56.7, 8.0)
    assert geocoord_to_enu(o, p) == pytest.approx((123.4, -56.7, 8.0), abs=1e-9)


def test_footprint():
    intr = CameraIntrinsics.centered(600.0, 640, 480)
    w, h = image_footprint(10.0, intr)
    assert (w, h) == pytest.approx((10.6666667, 8.0))
    w2, h2 = image_footprint(20.0, intr)
    assert (w2, h2) == pytest.approx((2 * w, 2 * h))
    assert w / h == pytest.approx(640 / 480)
    with pytest.raises(ValueError):
        image_footprint(0.0, intr)


def _affine_points(coef, ref, pixels):
    geo = []
    for u, v in pixels:
        dlat, dlon = coef @ np.array([u, v, 1.0])
        geo.append(((u, v), GeoCoord(ref[0] + dlat, ref[1] + dlon)))
    return geo


COEF = np.array([[-1.2e-6, 3.4e-7, 2e-4], [5.1e-7, 1.6e-6, -3e-4]])


def test_fit_exact_three_points():
    pts = _affine_points(COEF, (40.0, -111.9), [(0, 0), (640, 0), (0, 480)])
    fit = fit_pixel_to_gps(pts)
    assert np.abs(fit.residuals(pts)).max() < 1e-12


def test_fit_recovers_coefficients():
    px = [(320, 240), (0, 0), (640, 0), (0, 480), (640, 480)]
    pts = _affine_points(COEF, (40.0, -111.9), px)
    fit = fit_pixel_to_gps(pts)
    got = fit.apply(np.array(px)) - np.array([40.0, -111.9])
    want = np.array([COEF @ np.array([u, v, 1.0]) for u, v in px])
    assert np.abs(got - want).max() < 1e-9
    assert np.abs(fit.matrix[:, :2] - COEF[:, :2]).max() < 1e-9


def test_fit_matches_normal_equations_under_noise():
    rng = np.random.default_rng(9)
    px = np.array([(320, 240), (0, 0), (640, 0), (0, 480), (640, 480)], float)
    sigma = 0.8
    noisy = px + rng.normal(0, sigma, px.shape)
    pts = _affine_points(COEF, (40.0, -111.9), noisy)
    # observations come from the clean map; the fit sees noisy pixels
    pts = [(tuple(px[i]), g) for i, (_, g) in enumerate(pts)]
    fit = fit_pixel_to_gps(pts)
    # independent oracle: solve the normal equations directly
    X = np.column_stack([px, np.ones(5)])
    Y = np.array([(g.lat - 40.0, g.lon + 111.9) for _, g in pts])
    beta = np.linalg.solve(X.T @ X, X.T @ Y)
    oracle = X @ beta
    got = fit.apply(px) - np.array([40.0, -111.9])
    assert np.abs(got - oracle).max() < 1e-12
    rms = np.sqrt(((got - Y) ** 2).sum(axis=1).mean())
    assert rms <= sigma * np.linalg.norm(COEF[:, :2], 2)


def test_fit_degenerate():
    pts = _affine_points(COEF, (40.0, -111.9), [(0, 0), (1, 1), (2, 2), (3, 3)])
    with pytest.raises(DegenerateConfiguration):
        fit_pixel_to_gps(pts)
    with pytest.raises(DegenerateConfiguration):
        fit_pixel_to_gps(pts[:2])
    with pytest.raises(ValueError):
        AffineTransform2D(np.full((2, 3), np.nan), (0.0, 0.0))


@settings(max_examples=60, deadline=None)
@given(lat, lon, lat, lon, lat, lon)
def test_haversine_metric(a1, o1, a2, o2, a3, o3):
    a, b, c = GeoCoord(a1, o1), GeoCoord(a2, o2), GeoCoord(a3, o3)
    ab, bc, ac = haversine_distance(a, b), haversine_distance(b, c), haversine_distance(a, c)
    assert haversine_distance(a, a) == 0.0
    assert ab == pytest.approx(haversine_distance(b, a), rel=1e-6)
    assert ac <= (ab + bc) * (1 + 1e-6) + 1e-6


@settings(max_examples=100, deadline=None)
@given(st.floats(-60, 60), lon, st.floats(-1000, 1000), st.floats(-1000, 1000))
def test_offset_round_trip(la, lo, east, north):
    o = GeoCoord(la, lo)
    d = math.hypot(east, north)
    got = haversine_distance(o, offset_geocoord(o, east, north))
    assert abs(got - d) <= 1e-3 * d + 1e-6


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_fit_locally_optimal(seed):
    rng = np.random.default_rng(seed)
    px = rng.uniform(0, 640, (6, 2))
    pts = _affine_points(COEF, (40.0, -111.9), px + rng.normal(0, 2.0, px.shape))
    pts = [(tuple(px[i]), g) for i, (_, g) in enumerate(pts)]
    fit = fit_pixel_to_gps(pts)
    best = (fit.residuals(pts) ** 2).sum()
    for _ in range(100):
        bumped = AffineTransform2D(fit.matrix * (1 + rng.normal(0, 1e-4, (2, 3))), fit.reference)
        assert (bumped.residuals(pts) ** 2).sum() >= best * (1 - 1e-12)
