"""Accuracy check on a static truck-sized box seen from the four-drone orbit.

The box is reconstructed in an arbitrary-scale frame (as structure from motion
would leave it), brought back to meters with the known trajectory diameter,
and measured between reference corners.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .pipeline import ReconFrame
from .plume_field import SolidBox
from .reconstruction import (View, VoxelReconstructor, crop_enclosure, export_point_cloud,
                             scale_to_world, trajectory_circle, write_ply)
from .sensing import DEFAULT_BACKGROUND, CameraIntrinsics, render
from .worker_control import OrbitPlan, camera_pose_for, capture_schedule, orbit_waypoint

TRUCK_SIZE = (6.0, 2.5, 2.0)
CIRCLE_DIAMETER = 20.0
ALTITUDE = 10.0
TOLERANCE = 0.05  # mean relative error bound
FRAME_SCALE = 7.3  # arbitrary reconstruction-frame unit, in meters
WORLD_THRESHOLD = 0.5  # exported density, 1/m


def truck_box(texture: float = 0.0) -> SolidBox:
    lx, ly, lz = TRUCK_SIZE
    return SolidBox((-lx / 2, -ly / 2, 0.0), (lx / 2, ly / 2, lz), texture=texture)


def corners(lo, hi) -> np.ndarray:
    """The 8 corners, index bits (x, y, z) from least significant."""
    lo, hi = np.asarray(lo, dtype=float), np.asarray(hi, dtype=float)
    return np.array([[(hi if (n >> a) & 1 else lo)[a] for a in range(3)] for n in range(8)])


def reference_pairs() -> list[tuple[int, int]]:
    """Corner n joined to its neighbor along axis n mod 3: 3 length, 3 width, 2 height pairs."""
    return [(n, n ^ (1 << (n % 3))) for n in range(8)]


def orbit_views(box: SolidBox, intr: CameraIntrinsics, n_drones: int = 4):
    """One quarter-window of the synchronized orbit: 65 frames per drone, 260 in all."""
    plan = OrbitPlan(center=(0.0, 0.0), radius=CIRCLE_DIAMETER / 2, altitude=ALTITUDE,
                     look_height=TRUCK_SIZE[2] / 2, revolutions=1)
    phases = dict(zip(range(n_drones), plan.phases))
    slots = [s for s in capture_schedule(plan, list(range(n_drones))) if s.quarter == 0]
    views = []
    for s in slots:
        pos, _ = orbit_waypoint(plan, phases[s.drone], s.timestamp)
        pose = camera_pose_for(pos, plan)
        views.append((pose, render(intr, pose, box, 0.0)))
    return views


@dataclass
class StaticResult:
    measured: np.ndarray  # per-pair lengths, m
    expected: np.ndarray
    extent: np.ndarray
    seconds: float
    n_views: int
    points: int
    errors: np.ndarray = field(init=False)

    def __post_init__(self):
        self.errors = np.abs(self.measured - self.expected) / self.expected

    @property
    def mean_error(self) -> float:
        return float(self.errors.mean())

    @property
    def passed(self) -> bool:
        return self.mean_error <= TOLERANCE

    def summary(self) -> str:
        lines = [f"views {self.n_views}, points {self.points}, {self.seconds:.1f} s",
                 "extent (m): " + " x ".join(f"{e:.3f}" for e in self.extent)]
        for (a, b), m, e, err in zip(reference_pairs(), self.measured, self.expected, self.errors):
            lines.append(f"corner {a}-{b}: {m:.3f} m (true {e:.3f}) error {100 * err:.2f}%")
        lines.append(f"mean error {100 * self.mean_error:.2f}% (std {100 * self.errors.std():.2f}%)"
                     f" -> {'PASS' if self.passed else 'FAIL'}")
        return "\n".join(lines)


def run_static_validation(max_dim: int = 64, image_scale: float = 0.125, texture: float = 0.0,
                          out=None, iterations: int = 100) -> StaticResult:
    t0 = time.perf_counter()
    box = truck_box(texture)
    intr = CameraIntrinsics.centered(1000.0, 1280, 720).scaled(image_scale)
    captured = orbit_views(box, intr)
    frame = ReconFrame(np.array([0.0, 0.0, ALTITUDE]), FRAME_SCALE)
    bg = frame.background(DEFAULT_BACKGROUND)
    views = [View(img, intr, frame.pose(pose), bg) for pose, img in captured]
    enclosure = frame.box(box.box.inflate(0.1).clip_below(0.0))
    est = VoxelReconstructor(max_dim=max_dim, iterations=iterations).fit(views, enclosure)
    grid = crop_enclosure(est.grid_, enclosure)
    center, recon_d, _ = trajectory_circle([v.pose.position for v in views])
    s = CIRCLE_DIAMETER / recon_d
    cloud = scale_to_world(export_point_cloud(grid, WORLD_THRESHOLD * s), recon_d,
                           CIRCLE_DIAMETER, center)
    if out is not None:
        Path(out).mkdir(parents=True, exist_ok=True)
        write_ply(Path(out) / "static_box.ply", cloud)
    half = 0.5 * grid.voxel_size * s  # points are voxel centers
    lo, hi = cloud.points.min(axis=0) - half, cloud.points.max(axis=0) + half
    got, want = corners(lo, hi), corners(box.lo, box.hi)
    pairs = reference_pairs()
    measured = np.array([np.linalg.norm(got[a] - got[b]) for a, b in pairs])
    expected = np.array([np.linalg.norm(want[a] - want[b]) for a, b in pairs])
    return StaticResult(measured, expected, hi - lo, time.perf_counter() - t0, len(views),
                        len(cloud))


__all__ = ["run_static_validation", "reference_pairs", "corners", "truck_box", "StaticResult"]
