"""Mission simulation: manager stabilization, formation, readiness barrier, orbit capture.

Everything runs on one sim clock. The manager loop and the bus both tick at
10 Hz; the orbit phase integrates worker kinematics at 40 Hz so that every
8 fps capture instant falls on an integration step.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np

from .coordination import (TOPIC_ACK, TOPIC_CAPTURE, TOPIC_ORBIT, TOPIC_POSE, TOPIC_READY,
                           TOPIC_TARGET, BusMessage, MessageBus, OrbitCommand, PoseReport,
                           Readiness, TargetAssignment, barrier_all_ready)
from .geodesy import GeoCoord, geocoord_to_enu, offset_geocoord
from .manager_control import (Altitude, ControlThresholds, DroneState, Mode, altitude_command,
                              centering_command, check_stability, compute_worker_targets,
                              wrap_deg, yaw_command)
from .sensing import (DEFAULT_BACKGROUND, CameraIntrinsics, CameraPose, DegenerateMask, EmptyMask,
                      MaskMoments, mask_moments, render, segment_smoke)
from .worker_control import (CaptureRecord, OrbitPlan, arrival_check, camera_pose_for,
                             capture_schedule, orbit_waypoint, track_command)

log = logging.getLogger(__name__)

DT = 0.1
ORBIT_SUBSTEPS = 4  # 40 Hz inside the orbit phase


class StabilizationTimeout(RuntimeError):
    def __init__(self, message, log=None):
        super().__init__(message)
        self.log = log or []


class BarrierTimeout(RuntimeError):
    pass


# -- kinematics --------------------------------------------------------------------


def _limit(v, max_norm):
    n = np.linalg.norm(v)
    return v * (max_norm / n) if n > max_norm else v


def step_kinematics(state: DroneState, v_ground, climb: float, yaw_target: float, dt: float,
                    max_speed: float = 5.0, max_climb: float = 2.0, yaw_rate: float = 30.0) -> None:
    """First-order model: commanded velocity is reached immediately, within limits."""
    v = _limit(np.asarray(v_ground, dtype=float), max_speed)
    vz = float(np.clip(climb, -max_climb, max_climb))
    state.velocity = np.array([v[0], v[1], vz])
    state.position = state.position + state.velocity * dt
    turn = float(np.clip(wrap_deg(yaw_target - state.yaw), -yaw_rate * dt, yaw_rate * dt))
    state.yaw = wrap_deg(state.yaw + turn)
    state.yaw_rate = turn / dt
    state.battery -= dt


# -- manager -----------------------------------------------------------------------


def observe(state: DroneState, field, t: float, intr: CameraIntrinsics, scale: float,
            background=DEFAULT_BACKGROUND):
    """Nadir render + oracle mask; moments are reported in nominal-resolution pixels."""
    small = intr.scaled(scale)
    img = render(small, CameraPose.nadir(state.position, state.yaw), field, t, background)
    mask = segment_smoke(img)
    try:
        m = mask_moments(mask)
    except (EmptyMask, DegenerateMask):
        return img, mask, None
    sx, sy = intr.width / small.width, intr.height / small.height
    m = replace(m, centroid=m.centroid * np.array([sx, sy]))
    return img, mask, m


@dataclass
class TickLog:
    tick: int
    time: float
    x: float
    y: float
    z: float
    yaw: float
    mode: str
    centroid_error: float
    area: float
    yaw_error: float

    HEADER = "tick\ttime\tx\ty\tz\tyaw\tmode\tcentroid_err_px\tarea\tyaw_err_deg"

    def line(self) -> str:
        return (f"{self.tick}\t{self.time:.1f}\t{self.x:.4f}\t{self.y:.4f}\t{self.z:.4f}\t"
                f"{self.yaw:.3f}\t{self.mode}\t{self.centroid_error:.3f}\t{self.area:.5f}\t"
                f"{self.yaw_error:.3f}")


@dataclass
class StabilizationResult:
    state: DroneState
    ticks: int
    first_stable_tick: int
    log: list[TickLog]
    mask: object
    moments: MaskMoments


def search_velocity(state: DroneState, waypoint, gain: float = 0.5, max_speed: float = 5.0):
    return _limit(gain * (np.asarray(waypoint, dtype=float) - state.position[:2]), max_speed)


def stabilize_manager(field, state: DroneState, intr: CameraIntrinsics,
                      thresholds: ControlThresholds, t0: float = 0.0, max_ticks: int = 1200,
                      scale: float = 0.125, search_waypoint=(0.0, 0.0), frozen: bool = False,
                      background=DEFAULT_BACKGROUND) -> StabilizationResult:
    """Run the 10 Hz search -> centering -> stabilized loop until the hold count is met.

    The plume clock is ``t0 + tick * DT`` unless ``frozen``.
    """
    if state.mode == Mode.MANUAL:
        state.transition(Mode.GUIDED_SEARCH)
    logs: list[TickLog] = []
    hold = 0
    first_stable = -1
    for tick in range(max_ticks):
        t = t0 if frozen else t0 + tick * DT
        _, mask, m = observe(state, field, t, intr, scale, background)
        yaw_target = state.yaw
        climb = 0.0
        if m is None:
            if state.mode in (Mode.CENTERING, Mode.STABILIZED):
                state.transition(Mode.GUIDED_SEARCH)
            hold = 0
            v = search_velocity(state, search_waypoint, max_speed=thresholds.max_speed)
            if np.hypot(*(np.asarray(search_waypoint) - state.position[:2])) < 1.0:
                climb = thresholds.climb_rate  # widen the view
            chk = None
        else:
            if state.mode == Mode.GUIDED_SEARCH:
                state.transition(Mode.CENTERING)
            chk = check_stability(state.yaw, m, intr, thresholds)
            if chk.ok:
                if state.mode == Mode.CENTERING:
                    state.transition(Mode.STABILIZED)
                    if first_stable < 0:
                        first_stable = tick
                hold += 1
            else:
                if state.mode == Mode.STABILIZED:
                    state.transition(Mode.CENTERING)
                hold = 0
            v = centering_command(m.centroid, intr, state.position[2], state.yaw, thresholds)
            cmd = altitude_command(m.area_fraction, thresholds)
            climb = {Altitude.ASCEND: 1.0, Altitude.DESCEND: -1.0, Altitude.HOLD: 0.0}[cmd] \
                * thresholds.climb_rate
            yaw_target = yaw_command(m.major_axis, state.yaw, m.isotropic)
        logs.append(TickLog(tick, tick * DT, *state.position, state.yaw, state.mode.value,
                            chk.centroid_error if chk else float("nan"),
                            m.area_fraction if m else 0.0, chk.yaw_error if chk else float("nan")))
        if hold >= thresholds.hold_ticks:
            return StabilizationResult(state, tick + 1, first_stable, logs, mask, m)
        if state.position[2] <= 2.0 and climb < 0:
            climb = 0.0  # stay clear of the ground
        step_kinematics(state, v, climb, yaw_target, DT, thresholds.max_speed,
                        thresholds.max_climb, thresholds.yaw_rate)
    raise StabilizationTimeout(f"manager not stabilized within {max_ticks} ticks", logs)


# -- workers -----------------------------------------------------------------------


class WorkerAgent:
    """Transit to the assigned target, then re-broadcast readiness until acknowledged."""

    def __init__(self, wid: str, state: DroneState, bus: MessageBus, origin: GeoCoord,
                 rng: np.random.Generator, rtk_sigma: float = 0.0, tolerance: float = 0.5,
                 gain: float = 2.0, max_speed: float = 5.0, max_climb: float = 2.0, yaw_rate: float = 30.0):
        self.id = wid
        self.state = state
        self.bus = bus
        self.origin = origin
        self.rng = rng
        self.rtk_sigma = rtk_sigma
        self.tolerance = tolerance
        self.gain = gain
        self.limits = (max_speed, max_climb, yaw_rate)
        self.target: TargetAssignment | None = None
        self.target_enu = None
        self.arrived = False
        self.acked = False
        self.orbit: OrbitCommand | None = None
        self.orbit_received_at: float | None = None
        self.holding = True  # False once the orbit loop takes over kinematics
        bus.register(wid)
        bus.subscribe(TOPIC_TARGET, self._on_target)
        bus.subscribe(TOPIC_ACK, self._on_ack)
        bus.subscribe(TOPIC_ORBIT, self._on_orbit)
        bus.add_ticker(self.tick)

    def _on_target(self, msg):
        a = msg.payload
        if a.worker != self.id or self.target is not None:
            return
        self.target = a
        east, north, _ = geocoord_to_enu(self.origin, GeoCoord(a.lat, a.lon))
        self.target_enu = np.array([east, north, a.altitude])

    def _on_ack(self, msg):
        if msg.payload.worker == self.id:
            self.acked = True

    def _on_orbit(self, msg):
        if self.orbit is None:
            self.orbit = msg.payload
            self.orbit_received_at = self.bus.now

    def gps(self) -> GeoCoord:
        p = self.state.position
        if self.rtk_sigma > 0:
            p = p + self.rng.normal(0.0, self.rtk_sigma, 3)
        g = offset_geocoord(self.origin, p[0], p[1])
        return GeoCoord(g.lat, g.lon, float(p[2]))

    def tick(self, now: float) -> None:
        if not self.holding:
            return
        if self.target_enu is None:
            step_kinematics(self.state, np.zeros(2), 0.0, self.state.yaw, DT, *self.limits)
            return
        err = self.target_enu - self.state.position
        v = self.gain * err
        step_kinematics(self.state, v[:2], v[2], self.target.yaw, DT, *self.limits)
        if not self.arrived:
            goal = GeoCoord(self.target.lat, self.target.lon, self.target.altitude)
            self.arrived = arrival_check(self.gps(), goal, self.tolerance)
        if round(now / DT) % 10 == 0:
            self.bus.publish(BusMessage(TOPIC_POSE, self.id,
                                        PoseReport(tuple(self.state.position), self.state.yaw), now))
        if self.arrived and not self.acked:
            self.bus.publish(BusMessage(TOPIC_READY, self.id, Readiness(self.id), now))


@dataclass
class FormationResult:
    ready_time: float
    orbit_start: float
    radius: float
    center: tuple[float, float]
    workers: list[WorkerAgent]
    targets: list
    command_sent: float


def run_formation(bus: MessageBus, manager: DroneState, intr: CameraIntrinsics, mask,
                  origin: GeoCoord, worker_states: dict[str, DroneState], worker_altitude: float,
                  timeout: float, lead: float = 2.0, extremes: str = "frame",
                  rtk_sigma: float = 0.0, rng=None) -> FormationResult:
    """Targets -> transit -> readiness barrier -> orbit command (only after the barrier)."""
    rng = rng if rng is not None else np.random.default_rng(0)
    targets = compute_worker_targets(manager, intr, mask, origin, worker_altitude, extremes)
    radius = float(np.hypot(targets[0].enu[0] - manager.position[0],
                            targets[0].enu[1] - manager.position[1]))
    center = (float(manager.position[0]), float(manager.position[1]))
    bus.register("manager")
    workers = [WorkerAgent(t.worker, worker_states[t.worker], bus, origin, rng, rtk_sigma)
               for t in targets]
    heard: set[str] = set()
    bus.subscribe(TOPIC_READY, lambda msg: heard.add(msg.payload.worker))
    orbit_cmd: dict = {}

    def manager_tick(now: float) -> None:
        # re-send targets until each worker reports in; re-send the orbit command until start
        for t in targets:
            if t.worker not in heard:
                bus.publish(BusMessage(TOPIC_TARGET, "manager",
                                       TargetAssignment(t.worker, t.geo.lat, t.geo.lon,
                                                        t.altitude, t.yaw), now))
        cmd = orbit_cmd.get("cmd")
        if cmd is not None and now < cmd.start_time:
            bus.publish(BusMessage(TOPIC_ORBIT, "manager", cmd, now))

    bus.add_ticker(manager_tick)
    manager_tick(bus.now)

    def on_ready(now: float) -> None:
        cmd = OrbitCommand(round(now + lead, 9), center, radius)
        orbit_cmd["cmd"] = cmd
        orbit_cmd["sent"] = now
        manager.transition(Mode.ORBITING)
        bus.publish(BusMessage(TOPIC_ORBIT, "manager", cmd, now))

    result = barrier_all_ready(bus, [w.id for w in workers], timeout, on_ready)
    if not result.ready:
        raise BarrierTimeout(f"workers not ready within {timeout} s")
    start = orbit_cmd["cmd"].start_time
    while bus.now + 1e-9 < start:
        bus.step()
    missing = [w.id for w in workers if w.orbit is None]
    if missing:
        raise BarrierTimeout(f"orbit command never reached {missing}")
    return FormationResult(result.time, start, radius, center, workers, targets,
                           orbit_cmd["sent"])


@dataclass
class OrbitResult:
    records: list[CaptureRecord]
    plan: OrbitPlan
    max_tracking_error: float


def run_orbit(bus: MessageBus, formation: FormationResult, plan: OrbitPlan,
              field_time_offset: float, max_speed: float = 12.0) -> OrbitResult:
    """Track the synchronized orbit at 40 Hz and capture on the shared schedule."""
    workers = {w.id: w for w in formation.workers}
    phases = {t.worker: t.phase for t in formation.targets}
    for w in workers.values():
        w.holding = False
    slots = sorted(capture_schedule(plan, list(workers)), key=lambda s: (s.timestamp, s.drone))
    substep = DT / ORBIT_SUBSTEPS
    n_steps = int(round(plan.duration / substep))
    records: list[CaptureRecord] = []
    max_err = 0.0
    si = 0
    t0 = formation.orbit_start
    for k in range(n_steps + 1):
        t = k * substep
        while si < len(slots) and slots[si].timestamp <= t + 1e-9:
            s = slots[si]
            w = workers[s.drone]
            pose = camera_pose_for(w.state.position, plan)
            wp, _ = orbit_waypoint(plan, phases[s.drone], s.timestamp)
            max_err = max(max_err, float(np.linalg.norm(wp - w.state.position)))
            records.append(CaptureRecord(s.drone, s.timestamp, field_time_offset + t0 + s.timestamp,
                                         s.quarter, s.revolution, pose))
            bus.publish(BusMessage(TOPIC_CAPTURE, s.drone, None, round(t0 + s.timestamp, 9)))
            si += 1
        if k == n_steps:
            break
        for wid, w in workers.items():
            v = track_command(w.state.position, plan, phases[wid], t + substep, max_speed=max_speed)
            _, yaw = orbit_waypoint(plan, phases[wid], min(t + substep, plan.duration))
            step_kinematics(w.state, v[:2], v[2], yaw, substep, max_speed=max_speed, yaw_rate=90.0)
        if (k + 1) % ORBIT_SUBSTEPS == 0:
            bus.step()
    return OrbitResult(records, plan, max_err)
