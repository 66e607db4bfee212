"""Manager drone: threshold-seeking stabilization above the plume and worker targeting.

Headings are degrees counter-clockwise from East. The nadir camera's image
top points along the heading, so image +u is the drone's right-hand side.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .geodesy import (GeoCoord, fit_pixel_to_gps, haversine_distance, image_footprint,
                      offset_geocoord)


class NotStabilized(RuntimeError):
    pass


class Mode(str, Enum):
    MANUAL = "manual"
    GUIDED_SEARCH = "guided_search"
    CENTERING = "centering"
    STABILIZED = "stabilized"
    ORBITING = "orbiting"


TRANSITIONS = {
    Mode.MANUAL: {Mode.GUIDED_SEARCH},
    Mode.GUIDED_SEARCH: {Mode.CENTERING},
    Mode.CENTERING: {Mode.STABILIZED, Mode.GUIDED_SEARCH},
    Mode.STABILIZED: {Mode.ORBITING, Mode.CENTERING, Mode.GUIDED_SEARCH},
    Mode.ORBITING: set(),
}


class Altitude(str, Enum):
    ASCEND = "ascend"
    DESCEND = "descend"
    HOLD = "hold"


@dataclass
class ControlThresholds:
    centroid_tolerance: float = 12.0  # px in the nominal 640x480 frame
    area_band: tuple[float, float] = (0.08, 0.12)
    yaw_tolerance: float = 5.0  # deg
    centering_gain: float = 0.5  # command (m/s) per meter of ground error
    climb_rate: float = 1.0  # m/s
    yaw_rate: float = 30.0  # deg/s
    max_speed: float = 5.0
    max_climb: float = 2.0
    hold_ticks: int = 20

    def __post_init__(self):
        lo, hi = self.area_band
        if not 0 <= lo < hi <= 1:
            raise ValueError("area band must satisfy 0 <= lower < upper <= 1")
        if self.centering_gain <= 0 or self.climb_rate <= 0 or self.yaw_rate <= 0:
            raise ValueError("gains and rates must be positive")
        if self.climb_rate > self.max_climb:
            raise ValueError("climb rate exceeds the vehicle's max climb")


@dataclass
class DroneState:
    id: str
    position: np.ndarray  # ENU m
    yaw: float  # deg CCW from East
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    mode: Mode = Mode.MANUAL
    battery: float = 140.0  # s of flight remaining
    yaw_rate: float = 0.0

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float)
        self.velocity = np.asarray(self.velocity, dtype=float)

    def transition(self, mode: Mode) -> None:
        if mode == self.mode:
            return
        if mode not in TRANSITIONS[self.mode]:
            raise RuntimeError(f"illegal mode change {self.mode.value} -> {mode.value}")
        self.mode = mode


def wrap_deg(a):
    """Wrap to (-180, 180]."""
    w = np.mod(np.asarray(a, dtype=float) + 180.0, 360.0) - 180.0
    w = np.where(w == -180.0, 180.0, w)
    return float(w) if np.ndim(w) == 0 else w


def body_axes(heading: float):
    """(forward, right) ground unit vectors for a heading."""
    h = np.radians(heading)
    return np.array([np.cos(h), np.sin(h)]), np.array([np.sin(h), -np.cos(h)])


def pixel_offset_to_ground(du, dv, altitude, intr, heading) -> np.ndarray:
    """Ground (east, north) displacement of an image offset seen from ``altitude``."""
    width_m, _ = image_footprint(altitude, intr)
    m_per_px = width_m / intr.width
    forward, right = body_axes(heading)
    return m_per_px * (du * right - dv * forward)


def centering_command(centroid, intr, altitude: float, heading: float,
                      thresholds: ControlThresholds) -> np.ndarray:
    """Proportional planar velocity (east, north) toward the smoke centroid."""
    du = centroid[0] - intr.cx
    dv = centroid[1] - intr.cy
    if np.hypot(du, dv) <= thresholds.centroid_tolerance:
        return np.zeros(2)
    v = thresholds.centering_gain * pixel_offset_to_ground(du, dv, altitude, intr, heading)
    speed = np.linalg.norm(v)
    if speed > thresholds.max_speed:
        v *= thresholds.max_speed / speed
    return v


def altitude_command(area_fraction: float, thresholds: ControlThresholds) -> Altitude:
    lo, hi = thresholds.area_band
    if area_fraction > hi:
        return Altitude.ASCEND
    if area_fraction < lo:
        return Altitude.DESCEND
    return Altitude.HOLD


def axis_heading(axis, heading: float) -> float:
    """World direction (deg) of an image-frame vector for a nadir camera."""
    forward, right = body_axes(heading)
    w = axis[0] * right - axis[1] * forward
    return float(np.degrees(np.arctan2(w[1], w[0])))


def yaw_command(axis, heading: float, isotropic: bool = False) -> float:
    """Heading perpendicular to the plume's major axis, reached by the smaller turn."""
    if isotropic:
        return wrap_deg(heading)
    theta = axis_heading(axis, heading)
    candidates = [wrap_deg(theta + 90.0), wrap_deg(theta - 90.0)]
    return min(candidates, key=lambda c: (abs(wrap_deg(c - heading)), c))


@dataclass(frozen=True)
class StabilityCheck:
    centroid_error: float
    area_fraction: float
    yaw_error: float
    centered: bool
    in_band: bool
    aligned: bool

    @property
    def ok(self) -> bool:
        return self.centered and self.in_band and self.aligned


def check_stability(heading: float, moments, intr, thresholds: ControlThresholds) -> StabilityCheck:
    err = float(np.hypot(moments.centroid[0] - intr.cx, moments.centroid[1] - intr.cy))
    target = yaw_command(moments.major_axis, heading, moments.isotropic)
    yaw_err = abs(wrap_deg(target - heading))
    lo, hi = thresholds.area_band
    return StabilityCheck(err, moments.area_fraction, yaw_err,
                          err <= thresholds.centroid_tolerance,
                          lo <= moments.area_fraction <= hi,
                          yaw_err <= thresholds.yaw_tolerance)


def stabilized(state: DroneState, moments, thresholds: ControlThresholds, intr) -> bool:
    """All three criteria on the same observation."""
    if moments is None:
        return False
    return check_stability(state.yaw, moments, intr, thresholds).ok


@dataclass(frozen=True)
class WorkerTarget:
    worker: str
    geo: GeoCoord
    enu: tuple[float, float, float]
    altitude: float
    yaw: float  # faces the manager
    phase: float  # orbit phase angle, deg CCW from East


BEARINGS = (("worker_e", 0.0), ("worker_n", 90.0), ("worker_w", 180.0), ("worker_s", 270.0))


def pixel_geocoords(manager_geo: GeoCoord, altitude: float, heading: float, intr, pixels):
    out = []
    for u, v in pixels:
        e, n = pixel_offset_to_ground(u - intr.cx, v - intr.cy, altitude, intr, heading)
        out.append(offset_geocoord(manager_geo, e, n))
    return out


def extreme_pixels(intr, mask=None, mode: str = "frame"):
    """Top and bottom points used to size the formation."""
    if mode == "frame":
        return [(intr.cx, 0.0), (intr.cx, float(intr.height))]
    if mode != "mask":
        raise ValueError(f"unknown extremes mode {mode!r}")
    rows = np.nonzero(np.asarray(mask.bits).any(axis=1))[0]
    if len(rows) == 0:
        raise ValueError("mask is empty")
    return [(intr.cx, float(rows[0])), (intr.cx, float(rows[-1] + 1))]


def compute_worker_targets(manager: DroneState, intr, mask, origin: GeoCoord,
                           worker_altitude: float, extremes: str = "frame"):
    """Four targets on compass bearings around the manager's nadir point.

    The formation radius is the ground distance from the image center to the
    top/bottom extreme points, measured through a pixel->GPS affine fit of the
    image center and corners plus the haversine formula.
    """
    if manager.mode != Mode.STABILIZED:
        raise NotStabilized(f"manager is {manager.mode.value}")
    altitude = float(manager.position[2])
    east, north = manager.position[:2]
    center_geo = offset_geocoord(origin, east, north)
    anchors = [(intr.cx, intr.cy), (0.0, 0.0), (float(intr.width), 0.0),
               (0.0, float(intr.height)), (float(intr.width), float(intr.height))]
    geos = pixel_geocoords(center_geo, altitude, manager.yaw, intr, anchors)
    affine = fit_pixel_to_gps(list(zip(anchors, geos)))
    ends = [affine.to_geocoord(p) for p in extreme_pixels(intr, mask, extremes)]
    radius = float(np.mean([haversine_distance(center_geo, g) for g in ends]))
    targets = []
    for worker, phase in BEARINGS:
        a = np.radians(phase)
        de, dn = radius * np.cos(a), radius * np.sin(a)
        geo = offset_geocoord(origin, east + de, north + dn)
        geo = GeoCoord(geo.lat, geo.lon, worker_altitude)
        targets.append(WorkerTarget(worker, geo, (east + de, north + dn, worker_altitude),
                                    worker_altitude, wrap_deg(phase + 180.0), phase))
    return targets
