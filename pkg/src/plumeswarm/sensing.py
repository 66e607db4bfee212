"""Pinhole cameras, emission-absorption rendering, smoke masks and mask moments."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .plume_field import ray_box_interval

SEGMENTATION_THRESHOLD = 0.05
MARCH_STEP = 0.1
TIE_TOLERANCE = 1e-6


class EmptyMask(ValueError):
    """No smoke pixels in the mask."""


class DegenerateMask(ValueError):
    """Too few pixels (or zero spread) for principal axes."""


@dataclass(frozen=True)
class CameraIntrinsics:
    focal: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.focal <= 0 or self.width <= 0 or self.height <= 0:
            raise ValueError("focal length and image size must be positive")
        if not (0 <= self.cx <= self.width and 0 <= self.cy <= self.height):
            raise ValueError("principal point must lie inside the image")

    @classmethod
    def centered(cls, focal: float, width: int, height: int) -> "CameraIntrinsics":
        return cls(float(focal), width / 2.0, height / 2.0, int(width), int(height))

    def scaled(self, factor: float) -> "CameraIntrinsics":
        """Same field of view at ``factor`` times the resolution."""
        w = max(1, int(round(self.width * factor)))
        h = max(1, int(round(self.height * factor)))
        sx, sy = w / self.width, h / self.height
        return CameraIntrinsics(self.focal * sx, self.cx * sx, self.cy * sy, w, h)


def _unit(v):
    v = np.asarray(v, dtype=float)
    n = np.linalg.norm(v)
    if n == 0:
        raise ValueError("zero-length vector")
    return v / n


@dataclass(frozen=True)
class CameraPose:
    """Camera center plus look direction and up hint (orthonormalized)."""

    position: tuple[float, float, float]
    direction: tuple[float, float, float]
    up: tuple[float, float, float]

    def __post_init__(self):
        d = _unit(self.direction)
        u = np.asarray(self.up, dtype=float)
        u = u - d * (u @ d)
        if np.linalg.norm(u) < 1e-9:
            raise ValueError("direction and up must not be parallel")
        object.__setattr__(self, "position", tuple(float(x) for x in self.position))
        object.__setattr__(self, "direction", tuple(d))
        object.__setattr__(self, "up", tuple(_unit(u)))

    @classmethod
    def look_at(cls, position, target, up=(0.0, 0.0, 1.0)) -> "CameraPose":
        d = np.asarray(target, dtype=float) - np.asarray(position, dtype=float)
        return cls(tuple(position), tuple(d), tuple(up))

    @classmethod
    def nadir(cls, position, heading_deg: float) -> "CameraPose":
        """Straight-down camera whose image top points along ``heading_deg``."""
        h = np.radians(heading_deg)
        return cls(tuple(position), (0.0, 0.0, -1.0), (np.cos(h), np.sin(h), 0.0))

    @property
    def right(self) -> np.ndarray:
        return np.cross(self.direction, self.up)

    def translated(self, offset) -> "CameraPose":
        return CameraPose(tuple(np.asarray(self.position) + offset), self.direction, self.up)


def pixel_rays(intr: CameraIntrinsics, pose: CameraPose):
    """Unit ray directions through every pixel center, row-major, plus the origin."""
    u = np.arange(intr.width) + 0.5 - intr.cx
    v = np.arange(intr.height) + 0.5 - intr.cy
    uu, vv = np.meshgrid(u, v)
    d = np.asarray(pose.direction)
    r = pose.right
    up = np.asarray(pose.up)
    dirs = intr.focal * d + uu[..., None] * r - vv[..., None] * up
    dirs = dirs.reshape(-1, 3)
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    return np.asarray(pose.position, dtype=float), dirs


def project_points(intr: CameraIntrinsics, pose: CameraPose, points):
    """World points to pixel coordinates (u, v) and depth along the view axis."""
    rel = np.asarray(points, dtype=float) - np.asarray(pose.position)
    depth = rel @ np.asarray(pose.direction)
    x = rel @ pose.right
    y = rel @ np.asarray(pose.up)
    with np.errstate(divide="ignore", invalid="ignore"):
        u = intr.cx + intr.focal * x / depth
        v = intr.cy - intr.focal * y / depth
    return np.stack([u, v], axis=-1), depth


@dataclass(frozen=True)
class Background:
    """Procedural checkered ground at ``origin[2]`` under a graded sky."""

    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)
    tile: float = 2.0
    ground_a: tuple[float, float, float] = (0.27, 0.45, 0.17)
    ground_b: tuple[float, float, float] = (0.46, 0.35, 0.21)
    horizon: tuple[float, float, float] = (0.78, 0.86, 0.95)
    zenith: tuple[float, float, float] = (0.36, 0.55, 0.86)

    def translated(self, offset) -> "Background":
        return Background(tuple(np.asarray(self.origin) + offset), self.tile, self.ground_a,
                          self.ground_b, self.horizon, self.zenith)

    def ground_distance(self, origin, dirs) -> np.ndarray:
        """Ray length to the ground plane, ``inf`` for rays that never reach it."""
        dz = dirs[..., 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            s = (self.origin[2] - np.asarray(origin)[..., 2]) / dz
        return np.where((dz < 0) & (s >= 0), s, np.inf)

    def colors(self, origin, dirs) -> np.ndarray:
        s = self.ground_distance(origin, dirs)
        hit = np.isfinite(s)
        out = np.empty(dirs.shape)
        elev = np.clip(dirs[..., 2], 0.0, 1.0)[..., None]
        out[:] = (1 - elev) * np.asarray(self.horizon) + elev * np.asarray(self.zenith)
        if hit.any():
            o = np.broadcast_to(np.asarray(origin, dtype=float), dirs.shape)
            p = o[hit] + s[hit, None] * dirs[hit]
            cell = np.floor((p[:, :2] - np.asarray(self.origin[:2])) / self.tile).astype(np.int64)
            odd = ((cell[:, 0] + cell[:, 1]) & 1).astype(bool)
            out[hit] = np.where(odd[:, None], self.ground_b, self.ground_a)
        return out


DEFAULT_BACKGROUND = Background()


@dataclass(frozen=True, eq=False)
class Image:
    """Rendered frame. ``rgb`` is (height, width, 3) in [0, 1]; ``opacity`` is the
    simulator's parallel smoke-opacity channel (``None`` for external images)."""

    rgb: np.ndarray
    opacity: np.ndarray | None = None

    def __post_init__(self):
        rgb = np.array(self.rgb, dtype=float)
        rgb.setflags(write=False)
        object.__setattr__(self, "rgb", rgb)
        if self.opacity is not None:
            op = np.array(self.opacity, dtype=float)
            if op.shape != rgb.shape[:2]:
                raise ValueError("opacity channel must match image size")
            op.setflags(write=False)
            object.__setattr__(self, "opacity", op)

    @property
    def width(self) -> int:
        return self.rgb.shape[1]

    @property
    def height(self) -> int:
        return self.rgb.shape[0]


@dataclass(frozen=True, eq=False)
class Mask:
    bits: np.ndarray

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def height(self) -> int:
        return self.bits.shape[0]


def _march(origin, dirs, near, far, field, t, step):
    """Front-to-back quadrature. Returns (emitted rgb, transmittance) per ray."""
    n_rays = len(dirs)
    color = np.zeros((n_rays, 3))
    trans = np.ones(n_rays)
    span = np.clip(far - near, 0.0, None)
    n = np.where(span > 0, np.ceil(span / step - 1e-9), 0).astype(int)
    if n.max(initial=0) == 0:
        return color, trans
    ds = np.where(n > 0, span / np.maximum(n, 1), 0.0)
    chunk = max(1, 400_000 // max(int(n.max()), 1))
    for s in range(0, n_rays, chunk):
        sl = slice(s, s + chunk)
        k = np.arange(int(n[sl].max(initial=0)))
        if len(k) == 0:
            continue
        valid = k[None, :] < n[sl, None]
        dist = near[sl, None] + (k[None, :] + 0.5) * ds[sl, None]
        pts = origin + dist[..., None] * dirs[sl, None, :]
        sigma, rgb = field.sample(pts, t)
        tau = np.where(valid, sigma * ds[sl, None], 0.0)
        alpha = 1.0 - np.exp(-tau)
        acc = np.cumsum(tau, axis=1)
        before = np.exp(-(acc - tau))
        w = before * alpha
        color[sl] = np.einsum("rk,rkc->rc", w, rgb)
        trans[sl] = np.exp(-acc[:, -1])
    return color, trans


def render_rays(origin, dirs, field, t, background=DEFAULT_BACKGROUND, step=None,
                method="auto"):
    """Composite ``field`` over the background along each ray.

    ``method="march"`` integrates front to back with step ``step``. For media of a
    single color the composite only depends on total optical depth, so
    ``method="auto"`` uses the field's exact line integral when it has one.
    Returns (rgb (N,3), opacity (N,)).
    """
    dirs = np.asarray(dirs, dtype=float).reshape(-1, 3)
    ground = background.ground_distance(origin, dirs)
    bg = background.colors(origin, dirs)
    color_const = getattr(field, "uniform_color", None)
    analytic = method == "analytic" or (
        method == "auto" and color_const is not None and hasattr(field, "optical_depth"))
    if analytic:
        tau = field.optical_depth(np.broadcast_to(origin, dirs.shape), dirs, ground, t)
        trans = np.exp(-tau)
        emitted = (1.0 - trans)[:, None] * np.asarray(color_const, dtype=float)
    else:
        step = step or getattr(field, "preferred_step", None) or MARCH_STEP
        box = field.extent(t)
        if box.is_empty:
            return bg, np.zeros(len(dirs))
        near, far = ray_box_interval(np.broadcast_to(origin, dirs.shape), dirs, box)
        far = np.minimum(far, ground)
        emitted, trans = _march(np.asarray(origin, dtype=float), dirs, near, far, field, t, step)
    rgb = emitted + trans[:, None] * bg
    return np.clip(rgb, 0.0, 1.0), 1.0 - trans


def render(intr: CameraIntrinsics, pose: CameraPose, field, t: float,
           background: Background = DEFAULT_BACKGROUND, step=None, method="auto") -> Image:
    origin, dirs = pixel_rays(intr, pose)
    rgb, opacity = render_rays(origin, dirs, field, t, background, step, method)
    return Image(rgb.reshape(intr.height, intr.width, 3),
                 opacity.reshape(intr.height, intr.width))


def segment_smoke(img: Image, threshold: float = SEGMENTATION_THRESHOLD) -> Mask:
    """Oracle segmentation: smoke wherever the rendered opacity exceeds ``threshold``."""
    if img.opacity is None:
        raise ValueError("image carries no opacity channel; render it with this module")
    return Mask(img.opacity > threshold)


@dataclass(frozen=True, eq=False)
class MaskMoments:
    area_fraction: float
    centroid: np.ndarray  # (u, v) pixels
    axes: np.ndarray  # columns are unit eigenvectors, major first
    eigenvalues: np.ndarray  # descending
    isotropic: bool

    @property
    def major_axis(self) -> np.ndarray:
        return self.axes[:, 0]


def mask_moments(m: Mask) -> MaskMoments:
    bits = np.asarray(m.bits, dtype=bool)
    count = int(bits.sum())
    if count == 0:
        raise EmptyMask("mask has no smoke pixels")
    if count < 3:
        raise DegenerateMask("fewer than 3 mask pixels")
    v, u = np.nonzero(bits)
    pts = np.stack([u + 0.5, v + 0.5], axis=1)
    centroid = pts.mean(axis=0)
    rel = pts - centroid
    cov = rel.T @ rel / count
    if not np.any(cov):
        raise DegenerateMask("mask covariance is zero")
    vals, vecs = np.linalg.eigh(cov)
    vals = np.clip(vals[::-1], 0.0, None)
    vecs = vecs[:, ::-1]
    isotropic = bool(vals[0] - vals[1] <= TIE_TOLERANCE * vals[0])
    if isotropic:
        vecs = np.eye(2)
    else:
        for i in range(2):
            lead = vecs[0, i] if abs(vecs[0, i]) > 1e-12 else vecs[1, i]
            if lead < 0:
                vecs[:, i] = -vecs[:, i]
    return MaskMoments(count / bits.size, centroid, vecs, vals, isotropic)


# -- image files ---------------------------------------------------------------

SIDECAR_FIELDS = (
    "time", "drone_id", "px", "py", "pz", "dx", "dy", "dz", "ux", "uy", "uz",
    "focal", "cx", "cy", "width", "height",
)


def _to_bytes(img: Image) -> np.ndarray:
    return np.round(np.clip(img.rgb, 0, 1) * 255).astype(np.uint8)


def write_ppm(path, img: Image) -> None:
    data = _to_bytes(img)
    with open(path, "wb") as fh:
        fh.write(f"P6\n{img.width} {img.height}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def read_ppm(path) -> Image:
    raw = Path(path).read_bytes()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        end = pos
        while not raw[end:end + 1].isspace():
            end += 1
        tokens.append(raw[pos:end])
        pos = end
    if tokens[0] != b"P6":
        raise ValueError("not a binary PPM file")
    w, h, maxval = (int(x) for x in tokens[1:])
    body = np.frombuffer(raw[pos + 1:pos + 1 + w * h * 3], dtype=np.uint8)
    return Image(body.reshape(h, w, 3) / float(maxval))


def write_png(path, img: Image) -> None:
    from PIL import Image as PILImage

    PILImage.fromarray(_to_bytes(img), mode="RGB").save(path)


def write_sidecar(path, time: float, drone_id: str, intr: CameraIntrinsics,
                  pose: CameraPose) -> None:
    """One ``key value`` line per entry, in ``SIDECAR_FIELDS`` order."""
    values = (repr(float(time)), drone_id, *(repr(float(x)) for x in pose.position),
              *(repr(float(x)) for x in pose.direction), *(repr(float(x)) for x in pose.up),
              repr(intr.focal), repr(intr.cx), repr(intr.cy), str(intr.width), str(intr.height))
    Path(path).write_text("".join(f"{k} {v}\n" for k, v in zip(SIDECAR_FIELDS, values)))


def read_sidecar(path):
    entries = dict(line.split(" ", 1) for line in Path(path).read_text().splitlines() if line)
    f = {k: entries[k].strip() for k in SIDECAR_FIELDS}
    pose = CameraPose((float(f["px"]), float(f["py"]), float(f["pz"])),
                      (float(f["dx"]), float(f["dy"]), float(f["dz"])),
                      (float(f["ux"]), float(f["uy"]), float(f["uz"])))
    intr = CameraIntrinsics(float(f["focal"]), float(f["cx"]), float(f["cy"]),
                            int(f["width"]), int(f["height"]))
    return float(f["time"]), f["drone_id"], intr, pose
