"""Worker drones: arrival verification, synchronized orbit waypoints, capture timing."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geodesy import GeoCoord, haversine_distance
from .sensing import CameraPose

ARRIVAL_TOLERANCE = 0.5


class OrbitComplete(Exception):
    pass


@dataclass(frozen=True)
class OrbitPlan:
    center: tuple[float, float]  # ENU ground point
    radius: float = 21.0
    period: float = 32.0
    altitude: float = 10.0
    phases: tuple[float, ...] = (0.0, 90.0, 180.0, 270.0)
    capture_rate: float = 8.0  # fps
    revolutions: int = 5
    look_height: float = 3.0  # cameras aim at this height above the center

    def __post_init__(self):
        if self.radius <= 0 or self.period <= 0:
            raise ValueError("orbit radius and period must be positive")
        wrapped = [round(p % 360.0, 9) for p in self.phases]
        if len(set(wrapped)) != len(wrapped):
            raise ValueError("orbit phases must be distinct modulo 360")
        if self.revolutions < 1 or self.capture_rate <= 0:
            raise ValueError("need at least one revolution and a positive capture rate")

    @property
    def duration(self) -> float:
        return self.revolutions * self.period

    @property
    def quarter_duration(self) -> float:
        return self.period / 4.0

    @property
    def frames_per_quarter(self) -> int:
        """Inclusive endpoints: both boundary frames of the quarter-arc count."""
        return int(round(self.quarter_duration * self.capture_rate)) + 1

    @property
    def look_target(self) -> np.ndarray:
        return np.array([self.center[0], self.center[1], self.look_height])


def arrival_check(current: GeoCoord, target: GeoCoord, tolerance: float = ARRIVAL_TOLERANCE) -> bool:
    """Horizontal haversine distance and altitude gap combined Euclidean-wise."""
    horizontal = haversine_distance(current, target)
    return bool(np.hypot(horizontal, current.alt - target.alt) <= tolerance)


def orbit_angle(plan: OrbitPlan, phase: float, t: float) -> float:
    return phase + 360.0 * t / plan.period


def orbit_waypoint(plan: OrbitPlan, phase: float, t: float):
    """(ENU position, yaw facing the center) at ``t`` seconds into the orbit."""
    if t < 0 or t > plan.duration + 1e-9:
        raise OrbitComplete(f"t={t} outside orbit of {plan.duration} s")
    a = np.radians(orbit_angle(plan, phase, t))
    pos = np.array([plan.center[0] + plan.radius * np.cos(a),
                    plan.center[1] + plan.radius * np.sin(a), plan.altitude])
    yaw = np.degrees(a) + 180.0
    return pos, float((yaw + 180.0) % 360.0 - 180.0)


def orbit_velocity(plan: OrbitPlan, phase: float, t: float) -> np.ndarray:
    a = np.radians(orbit_angle(plan, phase, t))
    w = 2 * np.pi / plan.period
    return np.array([-plan.radius * w * np.sin(a), plan.radius * w * np.cos(a), 0.0])


def track_command(position, plan: OrbitPlan, phase: float, t: float, gain: float = 1.0,
                  max_speed: float = 5.0) -> np.ndarray:
    """Feed-forward orbit velocity plus proportional correction toward the waypoint."""
    t = min(max(t, 0.0), plan.duration)
    wp, _ = orbit_waypoint(plan, phase, t)
    v = orbit_velocity(plan, phase, t) + gain * (wp - np.asarray(position))
    speed = np.linalg.norm(v)
    return v * (max_speed / speed) if speed > max_speed else v


@dataclass(frozen=True)
class CaptureSlot:
    drone: str
    timestamp: float  # s since orbit start
    quarter: int  # global quarter window index
    revolution: int


def capture_schedule(plan: OrbitPlan, drones) -> list[CaptureSlot]:
    """Frame times per drone; each quarter window yields ``frames_per_quarter`` slots.

    The last frame of one quarter and the first of the next share a timestamp:
    the same image is listed under both windows.
    """
    per_q = plan.frames_per_quarter
    steps = per_q - 1
    out = []
    for drone in drones:
        for q in range(4 * plan.revolutions):
            for k in range(per_q):
                t = (q * steps + k) / plan.capture_rate
                out.append(CaptureSlot(drone, t, q, q // 4))
    return out


@dataclass(frozen=True)
class CaptureRecord:
    drone: str
    timestamp: float  # s since orbit start
    field_time: float  # s on the plume clock
    quarter: int
    revolution: int
    pose: CameraPose

    @property
    def position(self) -> np.ndarray:
        return np.asarray(self.pose.position)

    def azimuth(self, center) -> float:
        p = self.position
        return float(np.degrees(np.arctan2(p[1] - center[1], p[0] - center[0])) % 360.0)


def camera_pose_for(position, plan: OrbitPlan) -> CameraPose:
    return CameraPose.look_at(tuple(position), tuple(plan.look_target))
