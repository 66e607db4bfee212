"""Scenario configuration: a versioned YAML document validated with pydantic.

Unknown keys are rejected at every level.
"""
from __future__ import annotations

from pathlib import Path

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .coordination import BusConfig
from .manager_control import ControlThresholds
from .plume_field import Emitter, PlumeFieldParams, WindStep
from .reconstruction import GridConfig
from .sensing import CameraIntrinsics
from .worker_control import OrbitPlan

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    pass


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class EmitterSpec(_Strict):
    source: tuple[float, float, float] = (0.0, 0.0, 0.0)
    rate: float = 2.0
    on_time: float = 1e9
    off_time: float = 0.0
    radius: float = 0.6
    growth: float = 0.1
    amplitude: float = 1.0
    start: float = 0.0
    lifetime: float = 20.0
    dilution: float = 0.0


class WindSpec(_Strict):
    start: float = 0.0
    east: float = 0.0
    north: float = 0.0


class PlumeSpec(_Strict):
    emitters: list[EmitterSpec] = Field(default_factory=lambda: [EmitterSpec()])
    wind: list[WindSpec] = Field(default_factory=lambda: [WindSpec(east=1.0)])
    buoyancy: float = 0.0
    jitter: float = 0.0
    color: tuple[float, float, float] = (0.8, 0.8, 0.8)
    seed: int | None = None  # defaults to the scenario seed

    def build(self, seed: int) -> PlumeFieldParams:
        return PlumeFieldParams(
            emitters=tuple(Emitter(**e.model_dump()) for e in self.emitters),
            wind=tuple(WindStep(**w.model_dump()) for w in self.wind),
            buoyancy=self.buoyancy, seed=self.seed if self.seed is not None else seed,
            jitter=self.jitter, color=self.color)


class CameraSpec(_Strict):
    focal: float
    width: int
    height: int

    def build(self) -> CameraIntrinsics:
        return CameraIntrinsics.centered(self.focal, self.width, self.height)


class OrbitSpec(_Strict):
    radius: float = 21.0  # used only when no formation radius is measured
    period: float = 32.0
    altitude: float = 10.0
    phases: tuple[float, float, float, float] = (0.0, 90.0, 180.0, 270.0)
    capture_rate: float = 8.0
    revolutions: int = 5
    look_height: float = 3.0

    def build(self, center, radius: float | None = None) -> OrbitPlan:
        d = self.model_dump()
        d["radius"] = radius if radius is not None else self.radius
        return OrbitPlan(center=tuple(center), **d)


class ControlSpec(_Strict):
    centroid_tolerance: float = 12.0
    area_band: tuple[float, float] = (0.08, 0.12)
    yaw_tolerance: float = 5.0
    centering_gain: float = 0.5
    climb_rate: float = 1.0
    yaw_rate: float = 30.0
    max_speed: float = 5.0
    max_climb: float = 2.0
    hold_ticks: int = 20

    def build(self) -> ControlThresholds:
        return ControlThresholds(**self.model_dump())


class BusSpec(_Strict):
    latency: float = 0.05
    jitter: float = 0.05
    drop_probability: float = 0.0
    link_latency: dict[str, float] = Field(default_factory=dict)
    link_drop: dict[str, float] = Field(default_factory=dict)

    def build(self, seed: int) -> BusConfig:
        return BusConfig(seed=seed, **self.model_dump())


class GridSpec(_Strict):
    max_dim: int = 48
    iterations: int = 60
    relaxation: float = 1.0
    subsets: int = 8
    tolerance: float = 1e-5
    photo_tolerance: float = 0.08
    alpha_max: float = 0.999
    alpha_min: float = 0.02
    min_views: int = 8
    min_span: float = 180.0
    line_search: bool = True
    carve: bool = True
    carve_fraction: float = 0.0
    refine_iterations: int = 0
    export_threshold: float = 0.05
    image_scale: float = 1.0 / 16.0
    enclosure_inflate: float = 0.1
    enclosure_cutoff: float = 0.01

    def build(self) -> GridConfig:
        d = self.model_dump()
        d.pop("enclosure_inflate")
        d.pop("enclosure_cutoff")
        return GridConfig(**d)


class SegmentSpec(_Strict):
    duration: float = 8.0
    fractions: tuple[float, ...] = (0.25, 0.5, 0.75)


class MissionSpec(_Strict):
    manager_start: tuple[float, float, float] = (-25.0, -10.0, 30.0)
    manager_yaw: float = 90.0
    search_waypoint: tuple[float, float] = (5.0, 0.0)  # rough plume location given by the operator
    worker_home: tuple[float, float, float] = (-30.0, -30.0, 10.0)
    worker_altitude: float = 10.0
    extremes: str = "frame"
    manager_scale: float = 0.125  # manager render resolution factor
    stabilization_ticks: int = 1200
    barrier_timeout: float = 120.0
    orbit_lead: float = 2.0  # s between orbit command and orbit start
    start_time: float = 20.0  # plume clock when the manager is launched
    rtk_sigma: float = 0.0
    pose_noise: float = 0.0
    write_images: bool = False  # also save each frame as PPM for inspection
    origin_lat: float = 40.0
    origin_lon: float = -111.9

    @field_validator("extremes")
    @classmethod
    def _extremes(cls, v):
        if v not in ("frame", "mask"):
            raise ValueError("extremes must be 'frame' or 'mask'")
        return v


class MetricsSpec(_Strict):
    training_frames: int = 3


class ScenarioConfig(_Strict):
    schema_version: int = SCHEMA_VERSION
    name: str = "default"
    seed: int = 7
    output_dir: str = "runs/default"
    plume: PlumeSpec = Field(default_factory=PlumeSpec)
    manager_camera: CameraSpec = CameraSpec(focal=600.0, width=640, height=480)
    worker_camera: CameraSpec = CameraSpec(focal=1000.0, width=1280, height=720)
    orbit: OrbitSpec = Field(default_factory=OrbitSpec)
    control: ControlSpec = Field(default_factory=ControlSpec)
    bus: BusSpec = Field(default_factory=BusSpec)
    grid: GridSpec = Field(default_factory=GridSpec)
    segments: SegmentSpec = Field(default_factory=SegmentSpec)
    mission: MissionSpec = Field(default_factory=MissionSpec)
    metrics: MetricsSpec = Field(default_factory=MetricsSpec)

    @model_validator(mode="after")
    def _version(self):
        if self.schema_version != SCHEMA_VERSION:
            raise ValueError(f"unsupported schema_version {self.schema_version}")
        return self

    def with_overrides(self, **changes) -> "ScenarioConfig":
        data = self.model_dump()
        for key, value in changes.items():
            if value is not None:
                data[key] = value
        return validate_config(data)

    def check_components(self) -> None:
        """Build every component once so their own invariants are enforced."""
        self.plume.build(self.seed)
        self.manager_camera.build()
        self.worker_camera.build()
        self.orbit.build((0.0, 0.0))
        self.control.build()
        self.bus.build(self.seed)
        self.grid.build()


def validate_config(data) -> ScenarioConfig:
    try:
        cfg = ScenarioConfig.model_validate(data or {})
        cfg.check_components()
    except (ValidationError, ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc
    return cfg


def load_config(path) -> ScenarioConfig:
    try:
        data = yaml.safe_load(Path(path).read_text())
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    if data is not None and not isinstance(data, dict):
        raise ConfigError("config root must be a mapping")
    return validate_config(data)


def dump_config(cfg: ScenarioConfig, path) -> None:
    data = cfg.model_dump(mode="json")
    Path(path).write_text(yaml.safe_dump(data, sort_keys=False))
