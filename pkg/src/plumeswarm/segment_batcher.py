"""Group capture records into full-circle time segments, plus overlapped in-betweens."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

BASE = "base"


class InsufficientData(ValueError):
    pass


@dataclass(frozen=True)
class TimeSegment:
    index: int
    start: float
    end: float
    records: tuple
    overlap: str  # "base" or e.g. "25%"

    @property
    def duration(self) -> float:
        return self.end - self.start

    @property
    def mid_time(self) -> float:
        return 0.5 * (self.start + self.end)


def overlap_label(fraction: float) -> str:
    return f"{round(fraction * 100):d}%"


def _window(records, start, end, eps=1e-9):
    """Records inside [start, end], one per (drone, timestamp)."""
    seen = {}
    for r in records:
        if start - eps <= r.timestamp <= end + eps:
            seen.setdefault((r.drone, round(r.timestamp, 9)), r)
    return tuple(sorted(seen.values(), key=lambda r: (r.timestamp, r.drone)))


def build_segments(records, duration: float = 8.0, fractions=(0.25, 0.5, 0.75)):
    """Base windows tiling the recording, then one shifted window per overlap fraction
    between each adjacent pair, all returned in start-time order.

    Base segment ``i`` takes the records of quarter window ``i``; with three
    fractions ``N`` base windows give ``4N - 3`` segments.
    """
    records = list(records)
    if not records:
        raise InsufficientData("no capture records")
    fractions = sorted(set(float(f) for f in fractions))
    if any(not 0 < f < 1 for f in fractions):
        raise ValueError("overlap fractions must lie strictly between 0 and 1")
    t0 = min(r.timestamp for r in records)
    t1 = max(r.timestamp for r in records)
    n_base = int(np.floor((t1 - t0) / duration + 1e-9))
    if n_base < 1:
        raise InsufficientData(f"recording spans {t1 - t0:.3f} s < one segment of {duration} s")
    windows = []
    for i in range(n_base):
        start = t0 + i * duration
        windows.append((start, BASE))
        if i + 1 < n_base:
            for f in fractions:
                windows.append((start + f * duration, overlap_label(f)))
    segments = []
    for idx, (start, label) in enumerate(windows):
        if label == BASE:
            q = int(round((start - t0) / duration))
            members = tuple(sorted((r for r in records if r.quarter == q),
                                   key=lambda r: (r.timestamp, r.drone)))
            if not members:
                members = _window(records, start, start + duration)
        else:
            members = _window(records, start, start + duration)
        segments.append(TimeSegment(idx, start, start + duration, members, label))
    return segments


def segment_count(n_base: int, n_fractions: int = 3) -> int:
    return n_base + (n_base - 1) * n_fractions


def coverage_gaps(segment: TimeSegment, center) -> np.ndarray:
    """Angular gaps (deg) between consecutive capture azimuths around ``center``."""
    az = np.sort([r.azimuth(center) for r in segment.records])
    if len(az) == 0:
        return np.array([360.0])
    return np.diff(np.concatenate([az, [az[0] + 360.0]]))


def check_coverage(segment: TimeSegment, center, max_gap: float = 1.5) -> tuple[bool, float]:
    gap = float(coverage_gaps(segment, center).max())
    return gap <= max_gap, gap


def write_manifest(path, segments, center, max_gap: float = 1.5) -> None:
    lines = ["segment\tt_start\tt_end\toverlap\trecords\tcoverage_ok\tmax_gap_deg"]
    for s in segments:
        ok, gap = check_coverage(s, center, max_gap)
        lines.append(f"{s.index}\t{s.start:.3f}\t{s.end:.3f}\t{s.overlap}\t{len(s.records)}"
                     f"\t{int(ok)}\t{gap:.4f}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
