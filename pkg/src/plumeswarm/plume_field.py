"""Synthetic smoke: cyclic Gaussian-puff emitters advected by a uniform wind.

Every quantity here is a pure function of ``(params, position, time)``. Puffs
are truncated at six standard deviations so extents and emptiness tests are
exact rather than asymptotic.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import erf

TRUNCATION = 6.0
SMOKE_COLOR = (0.8, 0.8, 0.8)


@dataclass(frozen=True)
class Box:
    """Axis-aligned box in ENU meters. ``lo > hi`` on any axis means empty."""

    lo: tuple[float, float, float]
    hi: tuple[float, float, float]

    def __post_init__(self):
        object.__setattr__(self, "lo", tuple(float(x) for x in self.lo))
        object.__setattr__(self, "hi", tuple(float(x) for x in self.hi))

    @classmethod
    def empty(cls) -> "Box":
        return cls((np.inf,) * 3, (-np.inf,) * 3)

    @classmethod
    def around(cls, points, pad=0.0) -> "Box":
        pts = np.asarray(points, dtype=float).reshape(-1, 3)
        if len(pts) == 0:
            return cls.empty()
        return cls(tuple(pts.min(axis=0) - pad), tuple(pts.max(axis=0) + pad))

    @property
    def is_empty(self) -> bool:
        return any(l > h for l, h in zip(self.lo, self.hi))

    @property
    def size(self) -> np.ndarray:
        return np.asarray(self.hi) - np.asarray(self.lo)

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (np.asarray(self.hi) + np.asarray(self.lo))

    def union(self, other: "Box") -> "Box":
        return Box(tuple(np.minimum(self.lo, other.lo)), tuple(np.maximum(self.hi, other.hi)))

    def intersect(self, other: "Box") -> "Box":
        return Box(tuple(np.maximum(self.lo, other.lo)), tuple(np.minimum(self.hi, other.hi)))

    def inflate(self, fraction: float) -> "Box":
        """Grow each side by ``fraction`` of its length, split evenly."""
        if self.is_empty:
            return self
        pad = 0.5 * fraction * self.size
        return Box(tuple(np.asarray(self.lo) - pad), tuple(np.asarray(self.hi) + pad))

    def contains(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        return np.all((pts >= self.lo) & (pts <= self.hi), axis=-1)

    def clip_below(self, z: float) -> "Box":
        lo = (self.lo[0], self.lo[1], max(self.lo[2], z))
        return Box(lo, self.hi)


def ray_box_interval(origins, dirs, box: Box):
    """Slab test. Returns (t_near, t_far); rays that miss have t_near >= t_far."""
    o = np.asarray(origins, dtype=float)
    d = np.asarray(dirs, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / d
        t0 = (np.asarray(box.lo) - o) * inv
        t1 = (np.asarray(box.hi) - o) * inv
    tmin = np.where(np.isnan(t0), -np.inf, np.minimum(t0, t1))
    tmax = np.where(np.isnan(t1), np.inf, np.maximum(t0, t1))
    # zero direction component with the origin inside the slab gives +/-inf pairs
    near = np.max(tmin, axis=-1)
    far = np.min(tmax, axis=-1)
    return np.maximum(near, 0.0), far


@dataclass(frozen=True)
class WindStep:
    """Uniform horizontal wind in m/s, in force from ``start`` seconds on."""

    start: float
    east: float
    north: float


@dataclass(frozen=True)
class Emitter:
    source: tuple[float, float, float]
    rate: float = 2.0  # puffs per second
    on_time: float = 1e9
    off_time: float = 0.0
    radius: float = 0.6  # Gaussian standard deviation at emission, m
    growth: float = 0.1  # m/s
    amplitude: float = 1.0  # peak extinction at emission, 1/m
    start: float = 0.0
    lifetime: float = 20.0
    dilution: float = 0.0  # peak scales as (radius0 / radius) ** dilution

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError("puff radius must be positive")
        if self.growth < 0:
            raise ValueError("puff growth rate must be non-negative")
        if self.on_time <= 0 or self.off_time < 0 or self.rate <= 0:
            raise ValueError("duty cycle periods and rate must be positive")
        if self.amplitude < 0:
            raise ValueError("density amplitude must be non-negative")
        if self.lifetime <= 0:
            raise ValueError("puff lifetime must be positive")

    @property
    def duty_period(self) -> float:
        return self.on_time + self.off_time

    def is_on(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        if self.off_time == 0:
            return t >= self.start
        phase = np.mod(t - self.start, self.duty_period)
        return (t >= self.start) & (phase < self.on_time)


@dataclass(frozen=True)
class PlumeFieldParams:
    emitters: tuple[Emitter, ...]
    wind: tuple[WindStep, ...] = (WindStep(0.0, 0.0, 0.0),)
    buoyancy: float = 0.0
    seed: int = 0
    jitter: float = 0.0  # per-puff velocity perturbation std, m/s
    color: tuple[float, float, float] = SMOKE_COLOR

    def __post_init__(self):
        object.__setattr__(self, "emitters", tuple(self.emitters))
        steps = tuple(sorted(self.wind, key=lambda w: w.start))
        if not steps or steps[0].start > 0:
            steps = (WindStep(0.0, 0.0, 0.0),) + steps
        object.__setattr__(self, "wind", steps)

    # -- puff bookkeeping -------------------------------------------------

    def displacement(self, t0, t1) -> np.ndarray:
        """Horizontal wind displacement integrated over [t0, t1], shape (..., 2)."""
        t0 = np.asarray(t0, dtype=float)
        t1 = np.asarray(t1, dtype=float)
        out = np.zeros(np.broadcast(t0, t1).shape + (2,))
        for i, step in enumerate(self.wind):
            end = self.wind[i + 1].start if i + 1 < len(self.wind) else np.inf
            overlap = np.clip(np.minimum(t1, end) - np.maximum(t0, step.start), 0.0, None)
            out[..., 0] += overlap * step.east
            out[..., 1] += overlap * step.north
        return out

    def wind_at(self, t: float) -> tuple[float, float]:
        current = self.wind[0]
        for step in self.wind:
            if step.start <= t:
                current = step
        return current.east, current.north

    def puffs(self, t: float):
        """Live puffs at time ``t``: (centers (N,3), sigmas (N,), peaks (N,))."""
        return _puffs(self, float(t))

    # -- field protocol used by the renderer -------------------------------

    @property
    def uniform_color(self):
        return self.color

    def sample(self, points, t):
        points = np.asarray(points, dtype=float)
        sigma = _sum_puffs(points, *self.puffs(t))
        rgb = np.broadcast_to(np.asarray(self.color, dtype=float), points.shape)
        return sigma, rgb

    def optical_depth(self, origins, dirs, s_far, t):
        return puff_line_integrals(origins, dirs, s_far, *self.puffs(t))

    def extent(self, t, cutoff=0.0) -> Box:
        return analytic_extent(self, t, cutoff)


@lru_cache(maxsize=64)
def _puffs(params: PlumeFieldParams, t: float):
    centers, sigmas, peaks = [], [], []
    for ei, em in enumerate(params.emitters):
        if t < em.start:
            continue
        k_max = int(np.floor((t - em.start) * em.rate + 1e-9))
        k = np.arange(k_max + 1)
        emit_t = em.start + k / em.rate
        age = t - emit_t
        keep = em.is_on(emit_t) & (age >= 0) & (age <= em.lifetime)
        if not keep.any():
            continue
        if params.jitter > 0:
            rng = np.random.default_rng([params.seed, ei])
            kick = params.jitter * rng.standard_normal((k_max + 1, 3))
            kick[:, 2] *= 0.5
        else:
            kick = np.zeros((k_max + 1, 3))
        k, emit_t, age, kick = k[keep], emit_t[keep], age[keep], kick[keep]
        drift = params.displacement(emit_t, np.full_like(emit_t, t))
        c = np.empty((len(k), 3))
        c[:, 0] = em.source[0] + drift[:, 0] + kick[:, 0] * age
        c[:, 1] = em.source[1] + drift[:, 1] + kick[:, 1] * age
        c[:, 2] = em.source[2] + (params.buoyancy + kick[:, 2]) * age
        r = em.radius + em.growth * age
        peak = em.amplitude * (em.radius / r) ** em.dilution
        centers.append(c)
        sigmas.append(r)
        peaks.append(peak)
    if not centers:
        return np.zeros((0, 3)), np.zeros(0), np.zeros(0)
    return np.concatenate(centers), np.concatenate(sigmas), np.concatenate(peaks)


def _sum_puffs(points, centers, sigmas, peaks, chunk=4096):
    flat = points.reshape(-1, 3)
    out = np.zeros(len(flat))
    if len(centers) == 0:
        return out.reshape(points.shape[:-1])
    for s in range(0, len(flat), chunk):
        p = flat[s:s + chunk]
        d2 = ((p[:, None, :] - centers[None, :, :]) ** 2).sum(-1)
        r2 = sigmas[None, :] ** 2
        g = np.where(d2 < (TRUNCATION ** 2) * r2, np.exp(-0.5 * d2 / r2), 0.0)
        out[s:s + chunk] = g @ peaks
    return out.reshape(points.shape[:-1])


def puff_line_integrals(origins, dirs, s_far, centers, sigmas, peaks, chunk=2048):
    """Exact integral of the truncated puff sum along each ray segment [0, s_far].

    ``dirs`` must be unit vectors.
    """
    o = np.asarray(origins, dtype=float).reshape(-1, 3)
    d = np.asarray(dirs, dtype=float).reshape(-1, 3)
    far = np.broadcast_to(np.asarray(s_far, dtype=float), (len(o),))
    out = np.zeros(len(o))
    if len(centers) == 0:
        return out
    root2 = np.sqrt(2.0)
    for s in range(0, len(o), chunk):
        oc = centers[None, :, :] - o[s:s + chunk, None, :]
        sc = np.einsum("rpk,rk->rp", oc, d[s:s + chunk])
        b2 = np.maximum((oc ** 2).sum(-1) - sc ** 2, 0.0)
        rad2 = (TRUNCATION * sigmas[None, :]) ** 2
        hit = b2 < rad2
        half = np.sqrt(np.where(hit, rad2 - b2, 0.0))
        lo = np.clip(sc - half, 0.0, far[s:s + chunk, None])
        hi = np.clip(sc + half, 0.0, far[s:s + chunk, None])
        scale = sigmas[None, :] * root2
        seg = erf((hi - sc) / scale) - erf((lo - sc) / scale)
        contrib = peaks[None, :] * np.exp(-0.5 * b2 / sigmas[None, :] ** 2)
        contrib = contrib * sigmas[None, :] * np.sqrt(np.pi / 2.0) * seg
        out[s:s + chunk] = np.where(hit & (hi > lo), contrib, 0.0).sum(-1)
    return out


@dataclass(frozen=True)
class DensitySample:
    sigma: float
    rgb: tuple[float, float, float]


def density_at(params: PlumeFieldParams, p, t: float) -> DensitySample:
    if t < 0:
        raise ValueError("t must be non-negative")
    sigma = float(_sum_puffs(np.asarray(p, dtype=float).reshape(1, 3), *params.puffs(t))[0])
    return DensitySample(sigma, tuple(params.color))


def analytic_extent(params: PlumeFieldParams, t: float, cutoff: float = 0.0) -> Box:
    """Bounding box of every point whose extinction exceeds ``cutoff``.

    With ``cutoff == 0`` this is the union of the truncation spheres. A positive
    cutoff shrinks each puff to the radius where its own peak falls below
    ``cutoff / n_puffs``, which still bounds the summed field.
    """
    if t < 0:
        raise ValueError("t must be non-negative")
    centers, sigmas, peaks = params.puffs(t)
    live = peaks > 0
    centers, sigmas, peaks = centers[live], sigmas[live], peaks[live]
    if len(centers) == 0:
        return Box.empty()
    reach = np.full(len(sigmas), TRUNCATION)
    if cutoff > 0:
        ratio = peaks * len(peaks) / cutoff
        reach = np.sqrt(2.0 * np.log(np.maximum(ratio, 1.0)))
        reach = np.minimum(reach, TRUNCATION)
        keep = reach > 0
        if not keep.any():
            return Box.empty()
        centers, sigmas, reach = centers[keep], sigmas[keep], reach[keep]
    half = (reach * sigmas)[:, None]
    return Box(tuple((centers - half).min(axis=0)), tuple((centers + half).max(axis=0)))


@dataclass(frozen=True)
class SolidBox:
    """Homogeneous box of extinction ``density``: opaque stand-in objects.

    With ``texture > 0`` the box is colored by a 3D checker of that cell size
    alternating ``color`` and ``color2`` (so renders must march).
    """

    lo: tuple[float, float, float]
    hi: tuple[float, float, float]
    density: float = 60.0
    color: tuple[float, float, float] = (0.75, 0.15, 0.12)
    texture: float = 0.0
    color2: tuple[float, float, float] = (0.95, 0.9, 0.85)

    @property
    def uniform_color(self):
        return None if self.texture > 0 else self.color

    @property
    def preferred_step(self):
        return min(0.02, self.texture / 10.0) if self.texture > 0 else None

    @property
    def box(self) -> Box:
        return Box(tuple(self.lo), tuple(self.hi))

    def sample(self, points, t):
        points = np.asarray(points, dtype=float)
        inside = self.box.contains(points)
        if self.texture > 0:
            cell = np.floor((points - np.asarray(self.lo)) / self.texture).astype(np.int64)
            odd = (cell.sum(axis=-1) & 1).astype(bool)[..., None]
            rgb = np.where(odd, np.asarray(self.color2, dtype=float), np.asarray(self.color, dtype=float))
        else:
            rgb = np.broadcast_to(np.asarray(self.color, dtype=float), points.shape)
        return np.where(inside, self.density, 0.0), rgb

    def optical_depth(self, origins, dirs, s_far, t):
        near, far = ray_box_interval(origins, dirs, self.box)
        far = np.minimum(far, s_far)
        return self.density * np.clip(far - near, 0.0, None)

    def extent(self, t, cutoff=0.0) -> Box:
        return self.box


@dataclass(frozen=True)
class EmptyField:
    """No smoke at all: renders to the pure background."""

    color: tuple[float, float, float] = SMOKE_COLOR

    @property
    def uniform_color(self):
        return self.color

    def sample(self, points, t):
        points = np.asarray(points, dtype=float)
        return np.zeros(points.shape[:-1]), np.broadcast_to(np.asarray(self.color), points.shape)

    def optical_depth(self, origins, dirs, s_far, t):
        return np.zeros(len(np.asarray(origins).reshape(-1, 3)))

    def extent(self, t, cutoff=0.0) -> Box:
        return Box.empty()
