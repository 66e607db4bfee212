import copy

import numpy as np
import pytest

from plumeswarm.coordination import BusConfig, MessageBus
from plumeswarm.geodesy import GeoCoord
from plumeswarm.manager_control import ControlThresholds, DroneState, Mode
from plumeswarm.plume_field import Emitter, EmptyField, PlumeFieldParams, WindStep
from plumeswarm.sensing import CameraIntrinsics
from plumeswarm.swarm import (BarrierTimeout, StabilizationTimeout, TickLog, observe,
                              run_formation, run_orbit, stabilize_manager, step_kinematics)
from plumeswarm.worker_control import OrbitPlan

INTR = CameraIntrinsics.centered(600.0, 640, 480)
ORIGIN = GeoCoord(40.0, -111.9)
T = 30.0
WORKERS = ["worker_e", "worker_n", "worker_w", "worker_s"]


def compact_plume():
    em = Emitter((0.0, 0.0, 0.0), radius=0.5, growth=0.05, lifetime=10.0)
    return PlumeFieldParams((em,), (WindStep(0.0, 1.0, 0.0),), seed=1)


def altitude_for_area(field, area, x=5.0):
    """Bisect the height at which the centered manager sees ``area`` of its frame as smoke."""
    lo, hi = 5.0, 40.0
    for _ in range(30):
        mid = 0.5 * (lo + hi)
        _, _, m = observe(DroneState("m", (x, 0.0, mid), 90.0), field, T, INTR, 0.125)
        lo, hi = (mid, hi) if m.area_fraction > area else (lo, mid)
    return 0.5 * (lo + hi)


@pytest.fixture(scope="module")
def stabilized():
    field = compact_plume()
    alt = altitude_for_area(field, 0.20)
    state = DroneState("manager", (5.0, -15.0, alt), 45.0)
    res = stabilize_manager(field, state, INTR, ControlThresholds(), t0=T, max_ticks=400,
                            frozen=True)
    return field, res


def test_kinematics_limits():
    s = DroneState("d", (0, 0, 10), 0.0, battery=10.0)
    step_kinematics(s, np.array([30.0, 40.0]), 9.0, 170.0, 0.1)
    assert np.linalg.norm(s.velocity[:2]) == pytest.approx(5.0)
    assert s.velocity[2] == pytest.approx(2.0)
    assert s.yaw == pytest.approx(3.0)
    assert s.position == pytest.approx((0.3, 0.4, 10.2))
    assert s.battery == pytest.approx(9.9)


def test_closed_loop_error_series(stabilized):
    _, res = stabilized
    th = ControlThresholds()
    err = np.array([log.centroid_error for log in res.log])
    seen = np.nonzero(np.isfinite(err))[0]
    first, inside = seen[0], np.nonzero(err <= th.centroid_tolerance)[0][0]
    assert np.all(np.isfinite(err[first:]))
    assert np.all(np.diff(err[first:inside + 1]) <= 0)
    assert np.all(err[inside:] <= th.centroid_tolerance)
    assert inside <= 200


def test_reaches_and_holds(stabilized):
    _, res = stabilized
    assert res.state.mode is Mode.STABILIZED
    assert res.ticks <= 200 + 20
    tail = [log.mode for log in res.log[-20:]]
    assert tail == ["stabilized"] * 20
    last = res.log[-1]
    assert 0.08 <= last.area <= 0.12 and last.yaw_error <= 5.0


def test_tick_log_format(stabilized):
    _, res = stabilized
    fields = res.log[5].line().split("\t")
    assert len(fields) == len(TickLog.HEADER.split("\t"))
    assert fields[0] == "5"


def test_stabilization_timeout():
    state = DroneState("manager", (0.0, 0.0, 20.0), 0.0)
    with pytest.raises(StabilizationTimeout) as info:
        stabilize_manager(EmptyField(), state, INTR, ControlThresholds(), max_ticks=30)
    assert len(info.value.log) == 30


def _formation(stabilized, seed, latency=0.3, drop=0.2, link_drop=None, timeout=120.0):
    _, res = stabilized
    manager = copy.deepcopy(res.state)
    bus = MessageBus(BusConfig(latency=latency, jitter=0.2, drop_probability=drop, seed=seed,
                               link_drop=link_drop or {}))
    ws = {w: DroneState(w, (-30.0 + 3 * i, -30.0, 10.0), 0.0) for i, w in enumerate(WORKERS)}
    f = run_formation(bus, manager, INTR, res.mask, ORIGIN, ws, 10.0, timeout,
                      rng=np.random.default_rng(seed))
    return bus, manager, f


def test_formation_equidistant_and_ordered(stabilized):
    bus, manager, f = _formation(stabilized, seed=4)
    d = [np.hypot(*(w.state.position[:2] - manager.position[:2])) for w in f.workers]
    assert (max(d) - min(d)) / np.mean(d) < 0.01
    assert np.mean(d) == pytest.approx(f.radius, rel=0.01)
    assert f.command_sent >= f.ready_time
    orbit = [e.time for e in bus.transcript if e.topic == "orbit_command"]
    assert min(orbit) >= f.ready_time
    assert manager.mode is Mode.ORBITING


def test_formation_transcript_deterministic(stabilized):
    a = _formation(stabilized, seed=9)[0].dump_transcript()
    b = _formation(stabilized, seed=9)[0].dump_transcript()
    assert a == b
    assert a != _formation(stabilized, seed=10)[0].dump_transcript()


def test_dead_worker_link_times_out(stabilized):
    with pytest.raises(BarrierTimeout):
        _formation(stabilized, seed=1, link_drop={"worker_n": 1.0}, timeout=20.0)


def test_orbit_captures(stabilized):
    field, _ = stabilized
    bus, manager, f = _formation(stabilized, seed=2, drop=0.0)
    plan = OrbitPlan(center=f.center, radius=f.radius, revolutions=1)
    o = run_orbit(bus, f, plan, T)
    assert len(o.records) == 4 * 4 * 65
    assert o.max_tracking_error <= 0.2
    for r in o.records[::97]:
        assert np.hypot(*(r.position[:2] - np.array(f.center))) == pytest.approx(f.radius, abs=0.2)
        assert r.field_time == pytest.approx(T + f.orbit_start + r.timestamp)
    captures = [e.time for e in bus.transcript if e.topic == "capture"]
    assert captures and min(captures) >= f.orbit_start >= f.ready_time
