"""Spherical-Earth geodesy: haversine, local ENU offsets, footprints, pixel->GPS fits."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

EARTH_RADIUS = 6_371_000.0
MAX_OFFSET = 10_000.0
MAX_LATITUDE = 89.0


class PolarSingularity(ValueError):
    pass


class DegenerateConfiguration(ValueError):
    pass


@dataclass(frozen=True)
class GeoCoord:
    lat: float
    lon: float
    alt: float = 0.0

    def __post_init__(self):
        if not -90.0 <= self.lat <= 90.0:
            raise ValueError(f"latitude {self.lat} out of range")
        if not -180.0 <= self.lon < 180.0:
            raise ValueError(f"longitude {self.lon} out of range")


def haversine_distance(a: GeoCoord, b: GeoCoord, radius: float = EARTH_RADIUS) -> float:
    """Great-circle distance in meters; altitude is ignored."""
    phi1, phi2 = np.radians(a.lat), np.radians(b.lat)
    dphi = phi2 - phi1
    dlmb = np.radians(b.lon - a.lon)
    h = np.sin(dphi / 2) ** 2 + np.cos(phi1) * np.cos(phi2) * np.sin(dlmb / 2) ** 2
    return float(2 * radius * np.arcsin(np.sqrt(min(h, 1.0))))


def _wrap_lon(lon: float) -> float:
    return (lon + 180.0) % 360.0 - 180.0


def offset_geocoord(origin: GeoCoord, east: float, north: float, up: float = 0.0) -> GeoCoord:
    """Shift ``origin`` by a small tangent-plane offset in meters."""
    if abs(origin.lat) > MAX_LATITUDE:
        raise PolarSingularity(f"latitude {origin.lat} too close to a pole")
    if abs(east) >= MAX_OFFSET or abs(north) >= MAX_OFFSET:
        raise ValueError("offset exceeds the local tangent-plane range (10 km)")
    dlat = np.degrees(north / EARTH_RADIUS)
    dlon = np.degrees(east / (EARTH_RADIUS * np.cos(np.radians(origin.lat))))
    return GeoCoord(float(origin.lat + dlat), float(_wrap_lon(origin.lon + dlon)),
                    float(origin.alt + up))


def geocoord_to_enu(origin: GeoCoord, p: GeoCoord) -> np.ndarray:
    """Inverse of :func:`offset_geocoord` (east, north, up) about ``origin``."""
    if abs(origin.lat) > MAX_LATITUDE:
        raise PolarSingularity(f"latitude {origin.lat} too close to a pole")
    north = np.radians(p.lat - origin.lat) * EARTH_RADIUS
    dlon = _wrap_lon(p.lon - origin.lon)
    east = np.radians(dlon) * EARTH_RADIUS * np.cos(np.radians(origin.lat))
    return np.array([east, north, p.alt - origin.alt])


def image_footprint(altitude: float, intr) -> tuple[float, float]:
    """Ground width and height (m) seen by a nadir camera at ``altitude``."""
    if altitude <= 0:
        raise ValueError("altitude must be positive")
    return altitude * intr.width / intr.focal, altitude * intr.height / intr.focal


@dataclass(frozen=True)
class AffineTransform2D:
    """``(lat, lon) = reference + matrix @ (u, v, 1)`` with offsets in degrees."""

    matrix: np.ndarray
    reference: tuple[float, float]

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float)
        if m.shape != (2, 3) or not np.all(np.isfinite(m)):
            raise ValueError("affine matrix must be a finite 2x3 array")
        object.__setattr__(self, "matrix", m)

    def apply(self, pixels) -> np.ndarray:
        px = np.atleast_2d(np.asarray(pixels, dtype=float))
        design = np.column_stack([px, np.ones(len(px))])
        return design @ self.matrix.T + np.asarray(self.reference)

    def to_geocoord(self, pixel, alt: float = 0.0) -> GeoCoord:
        lat, lon = self.apply(pixel)[0]
        return GeoCoord(float(lat), float(_wrap_lon(lon)), alt)

    def residuals(self, correspondences) -> np.ndarray:
        px = np.array([c[0] for c in correspondences], dtype=float)
        geo = np.array([(g.lat, g.lon) for _, g in correspondences])
        return self.apply(px) - geo


def fit_pixel_to_gps(correspondences) -> AffineTransform2D:
    """Least-squares affine map from pixel coordinates to latitude/longitude.

    ``correspondences`` is a sequence of ``((u, v), GeoCoord)``; at least three
    pixels must be non-collinear.
    """
    if len(correspondences) < 3:
        raise DegenerateConfiguration("need at least 3 correspondences")
    px = np.array([c[0] for c in correspondences], dtype=float)
    geo = np.array([(g.lat, g.lon) for _, g in correspondences])
    reference = geo[0]
    design = np.column_stack([px, np.ones(len(px))])
    centered = px - px.mean(axis=0)
    sv = np.linalg.svd(centered, compute_uv=False)
    if sv[1] <= 1e-9 * max(sv[0], 1.0):
        raise DegenerateConfiguration("pixel points are collinear")
    coef, *_ = np.linalg.lstsq(design, geo - reference, rcond=None)
    return AffineTransform2D(coef.T, (float(reference[0]), float(reference[1])))
