import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from plumeswarm.segment_batcher import (InsufficientData, build_segments, check_coverage,
                                        segment_count, write_manifest)
from plumeswarm.worker_control import (CaptureRecord, OrbitPlan, camera_pose_for,
                                       capture_schedule, orbit_waypoint)

DRONES = ["worker_e", "worker_n", "worker_w", "worker_s"]


def ideal_records(revolutions=5, quarters=None):
    plan = OrbitPlan((0.0, 0.0), revolutions=revolutions)
    phases = dict(zip(DRONES, plan.phases))
    out = []
    for s in capture_schedule(plan, DRONES):
        if quarters is not None and s.quarter >= quarters:
            continue
        pos, _ = orbit_waypoint(plan, phases[s.drone], s.timestamp)
        out.append(CaptureRecord(s.drone, s.timestamp, s.timestamp, s.quarter, s.revolution,
                                 camera_pose_for(pos, plan)))
    return out


@pytest.fixture(scope="module")
def five_revs():
    return build_segments(ideal_records(5))


def test_five_revolution_count(five_revs):
    assert len(five_revs) == 77
    assert sum(s.overlap == "base" for s in five_revs) == 20
    assert segment_count(20) == 77


def test_each_segment_full_circle(five_revs):
    for s in five_revs:
        assert len(s.records) == 260
        ok, gap = check_coverage(s, (0.0, 0.0))
        assert ok and gap <= 1.5
        assert s.duration == pytest.approx(8.0)


def test_start_stride(five_revs):
    starts = np.array([s.start for s in five_revs])
    assert np.all(np.diff(starts) > 0)
    assert np.diff(starts) == pytest.approx(np.full(76, 2.0))


def test_small_counts():
    assert len(build_segments(ideal_records(1, quarters=1))) == 1
    segs = build_segments(ideal_records(2, quarters=5))
    assert len(segs) == 17
    labels = [s.overlap for s in segs[:5]]
    assert labels == ["base", "25%", "50%", "75%", "base"]
    assert len(build_segments(ideal_records(2, quarters=5), fractions=())) == 5


def test_insufficient():
    recs = [r for r in ideal_records(1) if r.timestamp < 7.0]
    with pytest.raises(InsufficientData):
        build_segments(recs)
    with pytest.raises(InsufficientData):
        build_segments([])


def test_manifest(tmp_path):
    segs = build_segments(ideal_records(1, quarters=2))
    write_manifest(tmp_path / "m.tsv", segs, (0.0, 0.0))
    rows = (tmp_path / "m.tsv").read_text().splitlines()
    assert rows[0].split("\t")[:5] == ["segment", "t_start", "t_end", "overlap", "records"]
    assert len(segs) == 5 and len(rows) == 6
    assert all(r.split("\t")[5] == "1" for r in rows[1:])


@settings(max_examples=20, deadline=None)
@given(n=st.integers(1, 20), k=st.integers(0, 3))
def test_count_formula(n, k):
    fractions = (0.25, 0.5, 0.75)[:k]
    recs = ideal_records((n + 3) // 4, quarters=n)
    segs = build_segments(recs, fractions=fractions)
    assert len(segs) == n + (n - 1) * k == segment_count(n, k)
    if k == 3:
        assert len(segs) == 4 * n - 3
