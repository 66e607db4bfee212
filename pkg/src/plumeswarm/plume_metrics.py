"""Per-segment plume characterization: hull volume, angle of deviation, mean height."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .hull import ConvexHull3D, DegenerateGeometry, TooFewPoints
from .reconstruction import WORLD_METERS, PointCloud

__all__ = ["DegenerateGeometry", "TooFewPoints", "UndefinedDirection", "EmptyCloud",
           "PlumeMetrics", "convex_hull_volume", "angle_of_deviation", "average_height",
           "metrics_timeseries", "write_metrics_table", "read_metrics_table"]

DIRECTION_EPS = 1e-9


class UndefinedDirection(ValueError):
    pass


class EmptyCloud(ValueError):
    pass


@dataclass
class PlumeMetrics:
    segment: int
    t_start: float
    volume: float
    aod: float  # deg, CCW from the reference axis, (-180, 180]
    height: float
    points: int
    flags: list[str] = field(default_factory=list)


def convex_hull_volume(points) -> float:
    return ConvexHull3D(points).volume


def _wrap(a: float) -> float:
    w = (a + 180.0) % 360.0 - 180.0
    return 180.0 if w == -180.0 else w


def angle_of_deviation(points, origin=(0.0, 0.0), reference=(1.0, 0.0)) -> float:
    """Signed angle from ``reference`` to the mean ground projection, seen from ``origin``."""
    p = np.asarray(points, dtype=float).reshape(-1, 3)
    if len(p) == 0:
        raise EmptyCloud("no points")
    v = p[:, :2].mean(axis=0) - np.asarray(origin, dtype=float)[:2]
    if np.hypot(*v) <= DIRECTION_EPS:
        raise UndefinedDirection("mean ground position coincides with the origin")
    ref = np.asarray(reference, dtype=float)[:2]
    cross = ref[0] * v[1] - ref[1] * v[0]
    dot = ref @ v
    return _wrap(float(np.degrees(np.arctan2(cross, dot))))


def average_height(points) -> float:
    p = np.asarray(points, dtype=float).reshape(-1, 3)
    if len(p) == 0:
        raise EmptyCloud("no points")
    return float(p[:, 2].mean())


def segment_metrics(index: int, t_start: float, cloud: PointCloud, origin, reference) -> PlumeMetrics:
    pts = cloud.points
    m = PlumeMetrics(index, t_start, 0.0, float("nan"), float("nan"), len(pts))
    if len(pts) == 0:
        m.flags.append("empty")
        return m
    try:
        m.volume = convex_hull_volume(pts)
    except TooFewPoints:
        m.flags.append("too_few_points")
    except DegenerateGeometry:
        m.flags.append("degenerate")
    try:
        m.aod = angle_of_deviation(pts, origin, reference)
    except UndefinedDirection:
        m.flags.append("undefined_direction")
    m.height = average_height(pts)
    return m


def metrics_timeseries(clouds, origin=(0.0, 0.0), reference=(1.0, 0.0), t_starts=None):
    """One PlumeMetrics per cloud, in order; degenerate segments are flagged, not fatal."""
    out = []
    for i, cloud in enumerate(clouds):
        if cloud.units != WORLD_METERS:
            raise ValueError(f"segment {i}: cloud is in {cloud.units}, not world meters")
        t = float(t_starts[i]) if t_starts is not None else float("nan")
        out.append(segment_metrics(i, t, cloud, origin, reference))
    return out


TABLE_HEADER = ("segment", "t_start", "volume_m3", "aod_deg", "height_m", "points", "flags")


def write_metrics_table(path, series) -> None:
    lines = ["\t".join(TABLE_HEADER)]
    for m in series:
        lines.append(f"{m.segment}\t{m.t_start:.3f}\t{m.volume:.6f}\t{m.aod:.6f}\t{m.height:.6f}"
                     f"\t{m.points}\t{','.join(m.flags) or '-'}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_metrics_table(path) -> list[PlumeMetrics]:
    out = []
    with open(path) as fh:
        header = fh.readline().rstrip("\n").split("\t")
        if tuple(header) != TABLE_HEADER:
            raise ValueError("not a metrics table")
        for line in fh:
            seg, t, v, a, h, n, flags = line.rstrip("\n").split("\t")
            out.append(PlumeMetrics(int(seg), float(t), float(v), float(a), float(h), int(n),
                                    [] if flags == "-" else flags.split(",")))
    return out


def dominant_period(values, dt: float, pad: int = 8) -> float:
    """Period of the strongest non-DC component of a mean-removed series (zero padded)."""
    x = np.asarray(values, dtype=float)
    x = x - x.mean()
    n = len(x) * pad
    spec = np.abs(np.fft.rfft(x, n))
    freqs = np.fft.rfftfreq(n, dt)
    k = int(spec[1:].argmax()) + 1
    return float(1.0 / freqs[k])
