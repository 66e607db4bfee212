"""End-to-end stages: simulate -> reconstruct -> metrics, each reading the previous stage's files."""
from __future__ import annotations

import hashlib
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .cloud_segmentation import (filter_cloud, sample_training_frames, save_model,
                                 train_classifier, training_pixels)
from .config import ScenarioConfig
from .coordination import MessageBus
from .geodesy import GeoCoord
from .manager_control import DroneState
from .plume_field import Box
from .plume_metrics import metrics_timeseries, write_metrics_table
from .reconstruction import (PointCloud, View, VoxelReconstructor, crop_enclosure,
                             export_point_cloud, read_ply, save_grid, scale_to_world,
                             trajectory_circle, write_ply)
from .segment_batcher import build_segments, write_manifest
from .sensing import DEFAULT_BACKGROUND, Background, CameraPose, render, write_ppm, write_sidecar
from .swarm import run_formation, run_orbit, stabilize_manager
from .worker_control import CaptureRecord

log = logging.getLogger(__name__)

CAPTURES = "captures.tsv"
MISSION = "mission.json"
TRANSCRIPT = "transcript.tsv"
MANAGER_LOG = "manager_log.tsv"
SEGMENTS = "segments.tsv"
RECON_MANIFEST = "reconstruction.tsv"
METRICS = "metrics.tsv"
MODEL = "classifier.tsv"
PLOTS = ("volume.png", "aod.png", "height.png")

CAPTURE_HEADER = ("drone", "timestamp", "field_time", "quarter", "revolution",
                  "px", "py", "pz", "dx", "dy", "dz", "ux", "uy", "uz")
WORKER_IDS = ("worker_e", "worker_n", "worker_w", "worker_s")


class StageError(RuntimeError):
    """A stage failed; the message names the stage and, for segments, the index."""


# -- simulate ------------------------------------------------------------------------


@dataclass
class SimulationResult:
    records: list
    mission: dict


def _origin(cfg: ScenarioConfig) -> GeoCoord:
    return GeoCoord(cfg.mission.origin_lat, cfg.mission.origin_lon)


def write_captures(path, records) -> None:
    lines = ["\t".join(CAPTURE_HEADER)]
    for r in records:
        vals = [r.drone, repr(r.timestamp), repr(float(r.field_time)), str(r.quarter),
                str(r.revolution)]
        vals += [repr(float(x)) for x in (*r.pose.position, *r.pose.direction, *r.pose.up)]
        lines.append("\t".join(vals))
    Path(path).write_text("\n".join(lines) + "\n")


def read_captures(path) -> list[CaptureRecord]:
    out = []
    with open(path) as fh:
        if tuple(fh.readline().rstrip("\n").split("\t")) != CAPTURE_HEADER:
            raise ValueError(f"{path} is not a capture manifest")
        for line in fh:
            f = line.rstrip("\n").split("\t")
            v = [float(x) for x in f[5:]]
            pose = CameraPose(tuple(v[0:3]), tuple(v[3:6]), tuple(v[6:9]))
            out.append(CaptureRecord(f[0], float(f[1]), float(f[2]), int(f[3]), int(f[4]), pose))
    return out


def run_simulate(cfg: ScenarioConfig, out=None) -> SimulationResult:
    """Search, stabilize, form up, pass the barrier, orbit and capture."""
    out = Path(out or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    m = cfg.mission
    field = cfg.plume.build(cfg.seed)
    origin = _origin(cfg)
    man_intr = cfg.manager_camera.build()
    manager = DroneState("manager", m.manager_start, m.manager_yaw, battery=1e9)
    stab = stabilize_manager(field, manager, man_intr, cfg.control.build(), t0=m.start_time,
                             max_ticks=m.stabilization_ticks, scale=m.manager_scale,
                             search_waypoint=m.search_waypoint)
    Path(out / MANAGER_LOG).write_text(
        "\n".join([stab.log[0].HEADER] + [t.line() for t in stab.log]) + "\n")
    # the bus clock starts when the manager is stabilized
    field_offset = m.start_time + stab.ticks * 0.1
    bus = MessageBus(cfg.bus.build(cfg.seed))
    home = np.asarray(m.worker_home, dtype=float)
    workers = {w: DroneState(w, home + [3.0 * i, 0.0, 0.0], 0.0, battery=1e9)
               for i, w in enumerate(WORKER_IDS)}
    rng = np.random.default_rng([cfg.seed, 1])
    try:
        formation = run_formation(bus, manager, man_intr, stab.mask, origin, workers,
                                  m.worker_altitude, m.barrier_timeout, m.orbit_lead,
                                  m.extremes, m.rtk_sigma, rng)
    finally:
        bus.dump_transcript(out / TRANSCRIPT)
    plan = cfg.orbit.build(formation.center, formation.radius)
    orbit = run_orbit(bus, formation, plan, field_offset)
    bus.dump_transcript(out / TRANSCRIPT)
    records = orbit.records
    write_captures(out / CAPTURES, records)
    side = out / "sidecars"
    side.mkdir(exist_ok=True)
    intr = cfg.worker_camera.build()
    frames = out / "frames"
    if m.write_images:
        frames.mkdir(exist_ok=True)
    small = intr.scaled(cfg.grid.image_scale)
    for i, r in enumerate(records):
        name = f"{i:05d}_{r.drone}"
        write_sidecar(side / f"{name}.txt", r.field_time, r.drone, intr, r.pose)
        if m.write_images:
            write_ppm(frames / f"{name}.ppm", render(small, r.pose, field, r.field_time))
    mission = {
        "seed": cfg.seed,
        "stabilization_ticks": stab.ticks,
        "first_stable_tick": stab.first_stable_tick,
        "manager_position": [float(x) for x in manager.position],
        "manager_yaw": float(manager.yaw),
        "field_time_offset": field_offset,
        "barrier_ready_time": formation.ready_time,
        "orbit_command_time": formation.command_sent,
        "orbit_start": formation.orbit_start,
        "orbit_center": list(formation.center),
        "orbit_radius": formation.radius,
        "orbit_altitude": plan.altitude,
        "max_tracking_error": orbit.max_tracking_error,
        "records": len(records),
        "revolutions": plan.revolutions,
    }
    Path(out / MISSION).write_text(json.dumps(mission, indent=2) + "\n")
    log.info("simulate: %d records, orbit radius %.2f m", len(records), formation.radius)
    return SimulationResult(records, mission)


# -- reconstruct ---------------------------------------------------------------------


def parse_segments(spec: str | None, n: int) -> list[int]:
    """'0-9', '3,5,7-8' or None (all). Indices beyond ``n`` are an error."""
    if spec is None:
        return list(range(n))
    chosen = set()
    for part in spec.split(","):
        part = part.strip()
        if not part:
            continue
        if "-" in part:
            a, b = part.split("-", 1)
            lo, hi = int(a), int(b)
        else:
            lo = hi = int(part)
        if lo < 0 or hi < lo or hi >= n:
            raise ValueError(f"segment range {part!r} outside 0-{n - 1}")
        chosen.update(range(lo, hi + 1))
    return sorted(chosen)


@dataclass(frozen=True)
class ReconFrame:
    """Similarity between world meters and the reconstruction frame: p_rec = (p - center) / k."""

    center: np.ndarray
    k: float

    def pose(self, pose: CameraPose) -> CameraPose:
        p = (np.asarray(pose.position) - self.center) / self.k
        return CameraPose(tuple(p), pose.direction, pose.up)

    def box(self, box: Box) -> Box:
        return Box(tuple((np.asarray(box.lo) - self.center) / self.k),
                   tuple((np.asarray(box.hi) - self.center) / self.k))

    def background(self, bg: Background) -> Background:
        return Background(tuple((np.asarray(bg.origin) - self.center) / self.k), bg.tile / self.k,
                          bg.ground_a, bg.ground_b, bg.horizon, bg.zenith)


def segment_hash(cfg: ScenarioConfig, segment) -> str:
    h = hashlib.sha256()
    h.update(json.dumps({"seed": cfg.seed, "plume": cfg.plume.model_dump(mode="json"),
                         "grid": cfg.grid.model_dump(mode="json"),
                         "camera": cfg.worker_camera.model_dump(mode="json"),
                         "pose_noise": cfg.mission.pose_noise}, sort_keys=True).encode())
    for r in segment.records:
        h.update(f"{r.drone}|{r.timestamp!r}|{r.field_time!r}|{r.pose.position}".encode())
    return h.hexdigest()[:16]


def segment_enclosure(field, segment, cfg: ScenarioConfig) -> Box:
    box = Box.empty()
    for t in (segment.records[0].field_time, segment.records[-1].field_time):
        box = box.union(field.extent(t, cfg.grid.enclosure_cutoff))
    if box.is_empty:
        return box
    return box.inflate(cfg.grid.enclosure_inflate).clip_below(0.0)


def _noisy_pose(pose: CameraPose, sigma: float, seed: int, index: int) -> CameraPose:
    if sigma <= 0:
        return pose
    rng = np.random.default_rng([seed, 2, index])
    return pose.translated(rng.normal(0.0, sigma, 3))


@dataclass
class SegmentOutcome:
    index: int
    hash: str
    points: int
    iterations: int
    objective: float
    photometric_ok: bool
    skipped: bool = False
    empty: bool = False


def reconstruct_one(cfg: ScenarioConfig, segment, indices, mission: dict, out: Path,
                    digest: str) -> SegmentOutcome:
    """``indices`` are the records' positions in the capture manifest (they seed pose noise)."""
    field = cfg.plume.build(cfg.seed)
    intr = cfg.worker_camera.build().scaled(cfg.grid.image_scale)
    cx, cy = mission["orbit_center"]
    frame = ReconFrame(np.array([cx, cy, mission["orbit_altitude"]]),
                       2.0 * mission["orbit_radius"])
    ply = out / "clouds" / f"segment_{segment.index:03d}.ply"
    enclosure = segment_enclosure(field, segment, cfg)
    if enclosure.is_empty:
        write_ply(ply, PointCloud.empty(units="world"))
        return SegmentOutcome(segment.index, digest, 0, 0, 0.0, True, empty=True)
    bg = frame.background(DEFAULT_BACKGROUND)
    views = []
    for r, gi in zip(segment.records, indices):
        img = render(intr, r.pose, field, r.field_time)
        noisy = _noisy_pose(r.pose, cfg.mission.pose_noise, cfg.seed, gi)
        views.append(View(img, intr, frame.pose(noisy), bg))
    enc = frame.box(enclosure)
    est = VoxelReconstructor.from_config(cfg.grid.build()).fit(views, enc)
    grid = crop_enclosure(est.grid_, enc)
    save_grid(out / "grids" / f"segment_{segment.index:03d}.psvg", grid)
    center, recon_d, _ = trajectory_circle([v.pose.position for v in views])
    real_d = 2.0 * mission["orbit_radius"]
    s = real_d / recon_d
    # density scales inversely with length, so the world threshold maps by s
    cloud = export_point_cloud(grid, cfg.grid.export_threshold * s)
    world = scale_to_world(cloud, recon_d, real_d, center)
    # georeference: the fitted circle center sits at the known orbit center
    target = np.array([cx, cy, mission["orbit_altitude"]])
    world = PointCloud(world.points + (target - center), world.colors, world.units)
    write_ply(ply, world)
    rep = est.report_
    obj = rep.objective[-1] if rep.objective else float("nan")
    return SegmentOutcome(segment.index, digest, len(world), rep.iterations, obj,
                          rep.photometric_ok)


def _job(args):
    return reconstruct_one(*args)


def _read_recon_manifest(path) -> dict[int, str]:
    done = {}
    p = Path(path)
    if not p.exists():
        return done
    for line in p.read_text().splitlines()[1:]:
        f = line.split("\t")
        done[int(f[0])] = f[1]
    return done


RECON_HEADER = "segment\thash\tpoints\titerations\tobjective\tphotometric_ok"


def run_reconstruct(cfg: ScenarioConfig, out=None, segments: str | None = None,
                    jobs: int = 1) -> list[SegmentOutcome]:
    """Reconstruct the selected segments; a segment whose cloud exists with a matching
    manifest hash is skipped."""
    out = Path(out or cfg.output_dir)
    try:
        records = read_captures(out / CAPTURES)
        mission = json.loads((out / MISSION).read_text())
    except (OSError, ValueError) as exc:
        raise StageError(f"reconstruct: simulate outputs missing or unreadable: {exc}") from exc
    segs = build_segments(records, cfg.segments.duration, cfg.segments.fractions)
    write_manifest(out / SEGMENTS, segs, mission["orbit_center"])
    chosen = parse_segments(segments, len(segs))
    (out / "clouds").mkdir(exist_ok=True)
    (out / "grids").mkdir(exist_ok=True)
    record_index = {(r.drone, r.timestamp, r.quarter): i for i, r in enumerate(records)}
    previous = _read_recon_manifest(out / RECON_MANIFEST)
    results: dict[int, SegmentOutcome] = {}
    todo = []
    for i in chosen:
        digest = segment_hash(cfg, segs[i])
        ply = out / "clouds" / f"segment_{i:03d}.ply"
        if ply.exists() and previous.get(i) == digest:
            results[i] = SegmentOutcome(i, digest, len(read_ply(ply)), 0, float("nan"), True,
                                        skipped=True)
        else:
            idx = [record_index[(r.drone, r.timestamp, r.quarter)] for r in segs[i].records]
            todo.append((cfg, segs[i], idx, mission, out, digest))
    try:
        if jobs > 1 and len(todo) > 1:
            with ProcessPoolExecutor(max_workers=jobs) as pool:
                futures = {a[1].index: pool.submit(_job, a) for a in todo}
                for i, fut in futures.items():
                    results[i] = _wrap(i, fut.result)
        else:
            for a in todo:
                results[a[1].index] = _wrap(a[1].index, lambda a=a: reconstruct_one(*a))
    finally:
        _write_recon_manifest(out / RECON_MANIFEST, results)
    return [results[i] for i in chosen]


def _wrap(i, fn):
    try:
        return fn()
    except Exception as exc:
        raise StageError(f"reconstruct: segment {i}: {type(exc).__name__}: {exc}") from exc


def _write_recon_manifest(path, results) -> None:
    lines = {}
    p = Path(path)
    if p.exists():
        for line in p.read_text().splitlines()[1:]:
            lines[int(line.split("\t")[0])] = line
    for i, r in results.items():
        if not r.skipped:
            lines[i] = (f"{i}\t{r.hash}\t{r.points}\t{r.iterations}\t{r.objective:.6g}"
                        f"\t{int(r.photometric_ok)}")
    p.write_text("\n".join([RECON_HEADER] + [lines[i] for i in sorted(lines)]) + "\n")


# -- metrics -------------------------------------------------------------------------


def _plot(path, t, y, ylabel, title):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 3.2), dpi=100)
    ax.plot(t, y, marker="o", ms=3, lw=1)
    ax.set_xlabel("time (s)")
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def run_metrics(cfg: ScenarioConfig, out=None):
    """Train the smoke classifier on seeded frames, filter every cloud present and tabulate."""
    out = Path(out or cfg.output_dir)
    try:
        records = read_captures(out / CAPTURES)
        mission = json.loads((out / MISSION).read_text())
    except (OSError, ValueError) as exc:
        raise StageError(f"metrics: simulate outputs missing or unreadable: {exc}") from exc
    segs = build_segments(records, cfg.segments.duration, cfg.segments.fractions)
    present = [s for s in segs if (out / "clouds" / f"segment_{s.index:03d}.ply").exists()]
    if not present:
        raise StageError("metrics: no reconstructed clouds found")
    field = cfg.plume.build(cfg.seed)
    intr = cfg.worker_camera.build().scaled(cfg.grid.image_scale)
    frames = [lambda r=r: render(intr, r.pose, field, r.field_time) for r in records]
    _, images, masks = sample_training_frames(frames, cfg.metrics.training_frames, cfg.seed)
    smoke, bg = training_pixels(images, masks)
    try:
        model = train_classifier(smoke, bg)
    except ValueError as exc:
        raise StageError(f"metrics: classifier training failed: {exc}") from exc
    save_model(out / MODEL, model)
    clouds = [filter_cloud(read_ply(out / "clouds" / f"segment_{s.index:03d}.ply"), model)
              for s in present]
    src = cfg.plume.emitters[0].source if cfg.plume.emitters else (0.0, 0.0, 0.0)
    t0 = mission["field_time_offset"] + mission["orbit_start"]
    series = metrics_timeseries(clouds, origin=src[:2], reference=(1.0, 0.0),
                                t_starts=[t0 + s.start for s in present])
    for m, s in zip(series, present):
        m.segment = s.index
    write_metrics_table(out / METRICS, series)
    t = [m.t_start for m in series]
    _plot(out / PLOTS[0], t, [m.volume for m in series], "hull volume (m$^3$)", "Plume volume")
    _plot(out / PLOTS[1], t, [m.aod for m in series], "deviation (deg)", "Angle of deviation")
    _plot(out / PLOTS[2], t, [m.height for m in series], "mean height (m)", "Average height")
    return series
