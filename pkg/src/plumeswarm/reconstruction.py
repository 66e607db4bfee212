"""Voxel emission-absorption reconstruction from posed multi-view images.

The forward model is the renderer's: each ray accumulates optical depth
through piecewise-constant voxels and composites voxel colors front to back
over the known background. Density is recovered by a multiplicative
algebraic update on per-ray optical depth (an ordered-subsets ISRA), with a
step-halving safeguard so the photometric objective never increases.
Colors come from opacity-weighted back-projection of the de-matted pixel
colors.
"""
from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .plume_field import Box, ray_box_interval
from .sensing import DEFAULT_BACKGROUND, Background, CameraIntrinsics, CameraPose, Image, pixel_rays

log = logging.getLogger(__name__)

RECONSTRUCTION_UNITS = "reconstruction"
WORLD_METERS = "world"


class InsufficientCoverage(ValueError):
    pass


class Divergence(RuntimeError):
    pass


class EmptyIntersection(ValueError):
    pass


class NonPositiveDiameter(ValueError):
    pass


# -- containers ------------------------------------------------------------------


@dataclass(eq=False)
class VoxelGrid:
    origin: np.ndarray  # lower corner of voxel (0, 0, 0)
    voxel_size: float
    sigma: np.ndarray  # (nx, ny, nz), extinction per unit length
    rgb: np.ndarray  # (nx, ny, nz, 3)

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=float)
        self.sigma = np.asarray(self.sigma, dtype=float)
        if self.rgb is None:
            self.rgb = np.zeros(self.sigma.shape + (3,))
        self.rgb = np.asarray(self.rgb, dtype=float)
        if self.sigma.ndim != 3 or min(self.sigma.shape) < 1:
            raise ValueError("grid dims must be positive")
        if self.rgb.shape != self.sigma.shape + (3,):
            raise ValueError("rgb must have shape dims + (3,)")
        if np.any(self.sigma < 0):
            raise ValueError("sigma must be non-negative")

    @classmethod
    def empty(cls, box: Box, voxel_size: float) -> "VoxelGrid":
        dims = np.maximum(np.ceil(box.size / voxel_size - 1e-9).astype(int), 1)
        return cls(np.asarray(box.lo), voxel_size, np.zeros(tuple(dims)), None)

    @classmethod
    def covering(cls, box: Box, max_dim: int) -> "VoxelGrid":
        """Cubic voxels sized so the longest side of ``box`` spans ``max_dim``."""
        if box.is_empty:
            raise ValueError("cannot build a grid over an empty box")
        return cls.empty(box, float(box.size.max()) / max_dim)

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.sigma.shape

    @property
    def box(self) -> Box:
        return Box(tuple(self.origin), tuple(self.origin + self.voxel_size * np.array(self.dims)))

    @property
    def preferred_step(self) -> float:
        return 0.5 * self.voxel_size

    uniform_color = None

    def centers(self) -> np.ndarray:
        idx = np.indices(self.dims).reshape(3, -1).T
        return self.origin + (idx + 0.5) * self.voxel_size

    def voxel_index(self, points) -> tuple[np.ndarray, np.ndarray]:
        """Flat voxel index per point and a mask of points inside the grid."""
        ijk = np.floor((np.asarray(points) - self.origin) / self.voxel_size).astype(np.int64)
        dims = np.array(self.dims)
        inside = np.all((ijk >= 0) & (ijk < dims), axis=-1)
        ijk = np.clip(ijk, 0, dims - 1)
        flat = (ijk[..., 0] * dims[1] + ijk[..., 1]) * dims[2] + ijk[..., 2]
        return flat, inside

    def sample(self, points, t=None):
        flat, inside = self.voxel_index(points)
        sigma = np.where(inside, self.sigma.reshape(-1)[flat], 0.0)
        rgb = self.rgb.reshape(-1, 3)[flat]
        return sigma, rgb

    def extent(self, t=None, cutoff=0.0) -> Box:
        return self.box

    def copy(self) -> "VoxelGrid":
        return VoxelGrid(self.origin.copy(), self.voxel_size, self.sigma.copy(), self.rgb.copy())


@dataclass(eq=False)
class PointCloud:
    points: np.ndarray  # (N, 3)
    colors: np.ndarray  # (N, 3) in [0, 1]
    units: str = RECONSTRUCTION_UNITS

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 3)
        self.colors = np.asarray(self.colors, dtype=float).reshape(-1, 3)
        if len(self.points) != len(self.colors):
            raise ValueError("points and colors differ in length")
        if not np.all(np.isfinite(self.points)):
            raise ValueError("point coordinates must be finite")

    def __len__(self) -> int:
        return len(self.points)

    @classmethod
    def empty(cls, units=RECONSTRUCTION_UNITS) -> "PointCloud":
        return cls(np.zeros((0, 3)), np.zeros((0, 3)), units)

    def subset(self, keep) -> "PointCloud":
        return PointCloud(self.points[keep], self.colors[keep], self.units)


@dataclass(frozen=True, eq=False)
class View:
    image: Image
    intrinsics: CameraIntrinsics
    pose: CameraPose
    background: Background = DEFAULT_BACKGROUND


# -- projection operator -----------------------------------------------------------


@dataclass(eq=False)
class RayProjection:
    """Sparse ray-by-voxel path-length matrix with per-ray samples kept in depth order."""

    matrix: sp.csr_matrix
    view_of_row: np.ndarray
    n_pixels: np.ndarray  # per view

    @property
    def indptr(self):
        return self.matrix.indptr

    @property
    def indices(self):
        return self.matrix.indices

    @property
    def data(self):
        return self.matrix.data


def _merge_runs(rows, idx, w):
    """Merge consecutive samples of one ray that fall in the same voxel."""
    if len(idx) == 0:
        return rows, idx, w
    new = np.ones(len(idx), dtype=bool)
    new[1:] = (idx[1:] != idx[:-1]) | (rows[1:] != rows[:-1])
    starts = np.nonzero(new)[0]
    return rows[starts], idx[starts], np.add.reduceat(w, starts)


def build_projection(views, grid: VoxelGrid, step: float | None = None) -> RayProjection:
    step = step or grid.preferred_step
    box = grid.box
    all_rows, all_idx, all_w = [], [], []
    view_of_row, n_pixels = [], []
    row_offset = 0
    for vi, view in enumerate(views):
        origin, dirs = pixel_rays(view.intrinsics, view.pose)
        n = len(dirs)
        near, far = ray_box_interval(np.broadcast_to(origin, dirs.shape), dirs, box)
        far = np.minimum(far, view.background.ground_distance(origin, dirs))
        span = far - near
        hit = np.nonzero(span > 1e-12)[0]
        counts = np.ceil(span[hit] / step - 1e-9).astype(np.int64)
        counts = np.maximum(counts, 1)
        ds = span[hit] / counts
        ray = np.repeat(np.arange(len(hit)), counts)
        first = np.repeat(np.cumsum(counts) - counts, counts)
        k = np.arange(counts.sum()) - first
        dist = near[hit][ray] + (k + 0.5) * ds[ray]
        pts = origin + dist[:, None] * dirs[hit][ray]
        flat, inside = grid.voxel_index(pts)
        rows = hit[ray][inside] + row_offset
        r, i, w = _merge_runs(rows, flat[inside], ds[ray][inside])
        all_rows.append(r)
        all_idx.append(i)
        all_w.append(w)
        view_of_row.append(np.full(n, vi, dtype=np.int32))
        n_pixels.append(n)
        row_offset += n
    rows = np.concatenate(all_rows)
    indptr = np.zeros(row_offset + 1, dtype=np.int64)
    np.add.at(indptr, rows + 1, 1)
    indptr = np.cumsum(indptr)
    matrix = sp.csr_matrix(
        (np.concatenate(all_w).astype(np.float32), np.concatenate(all_idx).astype(np.int32), indptr),
        shape=(row_offset, int(np.prod(grid.dims))))
    return RayProjection(matrix, np.concatenate(view_of_row), np.array(n_pixels))


def composite(proj: RayProjection, sigma_flat, rgb_flat, background_rgb):
    """Front-to-back composite along every row. Returns (rgb, transmittance, weights)."""
    tau = proj.data.astype(float) * sigma_flat[proj.indices]
    cum = np.cumsum(tau)
    row_len = np.diff(proj.indptr)
    row_start = np.repeat(proj.indptr[:-1], row_len)
    base = np.concatenate([[0.0], cum])[row_start]
    before = cum - tau - base
    w = np.exp(-before) * (1.0 - np.exp(-tau))
    row_of = np.repeat(np.arange(len(row_len)), row_len)
    total = np.zeros(len(row_len))
    np.add.at(total, row_of, tau)
    trans = np.exp(-total)
    color = np.zeros((len(row_len), 3))
    for c in range(3):
        color[:, c] = np.bincount(row_of, weights=w * rgb_flat[proj.indices, c], minlength=len(row_len))
    color += trans[:, None] * background_rgb
    return color, trans, w


class _Compositor:
    """Full-color forward model and its gradients over the rows that cross the grid.

    Samples are kept in ray order; ``row`` is the pixel index of each sample.
    """

    def __init__(self, row, idx, ds, n_vox, target_rgb, background_rgb):
        self.n_vox = n_vox
        self.n_pix = len(target_rgb)
        self.idx = idx
        self.ds = ds
        starts = np.ones(len(row), dtype=bool)
        starts[1:] = row[1:] != row[:-1]
        self.first = np.nonzero(starts)[0]
        self.active = row[self.first]
        self.row_of = np.cumsum(starts) - 1
        self.target = target_rgb[self.active]
        self.bg = background_rgb[self.active]
        # rows that miss every occupied voxel contribute a constant error
        rest = np.ones(self.n_pix, dtype=bool)
        rest[self.active] = False
        self.const_err = 0.5 * float(((background_rgb[rest] - target_rgb[rest]) ** 2).sum())
        self._row = row

    @classmethod
    def from_projection(cls, proj: RayProjection, target_rgb, background_rgb):
        row = np.repeat(np.arange(len(proj.indptr) - 1), np.diff(proj.indptr))
        return cls(row, proj.indices, proj.data.astype(float), proj.matrix.shape[1],
                   target_rgb, background_rgb)

    def pruned(self, sigma) -> "_Compositor":
        """Drop samples in empty voxels: multiplicative updates never revive them."""
        keep = sigma[self.idx] > 0
        full_target = np.zeros((self.n_pix, 3))
        full_bg = np.zeros((self.n_pix, 3))
        full_target[self.active] = self.target
        full_bg[self.active] = self.bg
        out = _Compositor(self._row[keep], self.idx[keep], self.ds[keep], self.n_vox,
                          full_target, full_bg)
        out.const_err += self.const_err
        return out

    def _row_sum(self, values):
        return np.add.reduceat(values, self.first, axis=0)

    def _row_cumsum(self, values):
        cum = np.cumsum(values, axis=0)
        base = np.concatenate([np.zeros((1,) + values.shape[1:]), cum])[self.first[self.row_of]]
        return cum - base

    def forward(self, sigma, colors):
        tau = self.ds * sigma[self.idx]
        before = self._row_cumsum(tau) - tau
        t_before = np.exp(-before)
        t_after = t_before * np.exp(-tau)
        w = t_before - t_after
        wc = w[:, None] * colors[self.idx]
        trans = t_after[np.concatenate([self.first[1:], [len(tau)]]) - 1]
        chat = self._row_sum(wc) + trans[:, None] * self.bg
        return w, t_after, wc, chat

    def error(self, chat) -> float:
        """Mean over pixels and channels of half the squared rgb residual."""
        sq = 0.5 * float(((chat - self.target) ** 2).sum()) + self.const_err
        return sq / (3 * self.n_pix)

    def backproject_colors(self, sigma, emitted):
        w = self.forward(sigma, np.zeros((self.n_vox, 3)))[0]
        wsum = np.bincount(self.idx, weights=w, minlength=self.n_vox)
        out = np.zeros((self.n_vox, 3))
        src = emitted[self.active][self.row_of]
        for c in range(3):
            acc = np.bincount(self.idx, weights=w * src[:, c], minlength=self.n_vox)
            out[:, c] = np.divide(acc, wsum, out=np.zeros_like(acc), where=wsum > 0)
        return out

    def steps(self, sigma, colors, fwd):
        """Diagonal Gauss-Newton steps: (d log sigma, d colors)."""
        w, t_after, wc, chat = fwd
        rr = (chat - self.target)[self.row_of]
        # d(rgb)/d(tau) per sample: own emission lost minus light from behind revealed
        jac = t_after[:, None] * colors[self.idx] - (chat[self.row_of] - self._row_cumsum(wc))
        dsig = self.ds * sigma[self.idx]
        g_log = np.bincount(self.idx, weights=dsig * (rr * jac).sum(axis=1), minlength=self.n_vox)
        h_log = np.bincount(self.idx, weights=dsig ** 2 * (jac ** 2).sum(axis=1), minlength=self.n_vox)
        g_col = np.stack([np.bincount(self.idx, weights=w * rr[:, c], minlength=self.n_vox)
                          for c in range(3)], axis=1)
        h_col = np.bincount(self.idx, weights=w * w, minlength=self.n_vox)
        return -g_log / np.maximum(h_log, 1e-12), -g_col / np.maximum(h_col, 1e-12)[:, None]

    def refine(self, sigma, colors, iterations, report, step=0.5):
        """Joint descent on the rgb photometric error, log-space (multiplicative) on
        sigma and linear on colors, halving the step until the error drops."""
        fwd = self.forward(sigma, colors)
        current = self.error(fwd[3])
        report.refine_objective.append(current)
        for _ in range(iterations):
            d_log, d_col = self.steps(sigma, colors, fwd)
            d_log = np.clip(d_log, -step, step)
            eta = 1.0
            for _ in range(8):
                cand_s = sigma * np.exp(eta * d_log)
                cand_c = np.clip(colors + eta * d_col, 0.0, 1.0)
                cand_fwd = self.forward(cand_s, cand_c)
                value = self.error(cand_fwd[3])
                if value < current:
                    break
                eta *= 0.5
            else:
                break
            gain = (current - value) / max(current, 1e-300)
            sigma, colors, fwd, current = cand_s, cand_c, cand_fwd, value
            report.refine_objective.append(current)
            if gain < 1e-6:
                break
        return sigma, colors


# -- reconstruction ----------------------------------------------------------------


@dataclass
class GridConfig:
    max_dim: int = 64
    iterations: int = 100
    relaxation: float = 1.0
    subsets: int = 8
    tolerance: float = 1e-5  # stop when the relative objective gain falls below this
    photo_tolerance: float = 0.08  # mean absolute per-pixel error bound per view
    alpha_max: float = 0.999
    alpha_min: float = 0.02  # below this a pixel's color says nothing about the smoke
    min_views: int = 8
    min_span: float = 180.0  # deg of azimuth the cameras must cover
    line_search: bool = True
    carve: bool = True
    carve_fraction: float = 0.0
    refine_iterations: int = 0
    export_threshold: float = 0.3
    image_scale: float = 1.0 / 16.0


def _views_measurements(views, alpha_max, alpha_min):
    alphas, colors, bgs = [], [], []
    for view in views:
        img = view.image
        origin, dirs = pixel_rays(view.intrinsics, view.pose)
        bg = view.background.colors(origin, dirs)
        rgb = img.rgb.reshape(-1, 3)
        if img.opacity is not None:
            alpha = img.opacity.reshape(-1)
        else:
            raise ValueError("views need the opacity matte channel")
        alphas.append(np.clip(alpha, 0.0, alpha_max))
        colors.append(rgb)
        bgs.append(bg)
    alpha = np.concatenate(alphas)
    rgb = np.concatenate(colors)
    bg = np.concatenate(bgs)
    confident = alpha > alpha_min
    emitted = np.empty_like(rgb)
    with np.errstate(divide="ignore", invalid="ignore"):
        emitted[confident] = (rgb[confident] - (1 - alpha[confident, None]) * bg[confident]) \
            / alpha[confident, None]
    fallback = emitted[confident].mean(axis=0) if confident.any() else np.full(3, 0.5)
    emitted[~confident] = fallback
    emitted = np.clip(emitted, 0.0, 1.0)
    return alpha, rgb, bg, emitted, confident


def azimuth_span(positions, center) -> float:
    """Degrees of azimuth covered by the camera centers (360 minus the largest gap)."""
    p = np.asarray(positions, dtype=float)
    az = np.sort(np.degrees(np.arctan2(p[:, 1] - center[1], p[:, 0] - center[0])) % 360.0)
    if len(az) < 2:
        return 0.0
    gaps = np.diff(np.concatenate([az, [az[0] + 360.0]]))
    return float(360.0 - gaps.max())


@dataclass
class ReconstructionReport:
    objective: list = field(default_factory=list)  # accepted iterations only
    refine_objective: list = field(default_factory=list)  # mean squared rgb error
    rejected: int = 0
    iterations: int = 0
    view_errors: np.ndarray | None = None

    @property
    def photometric_ok(self) -> bool:
        return self.view_errors is not None and bool(np.all(self.view_errors <= self._tol))

    _tol: float = 0.08


class VoxelReconstructor(BaseEstimator):
    """Estimator wrapper: ``fit(views, enclosure)`` leaves ``grid_`` and ``report_``."""

    def __init__(self, max_dim=64, iterations=100, relaxation=1.0, subsets=8, tolerance=1e-5,
                 photo_tolerance=0.08, alpha_max=0.999, alpha_min=0.02, min_views=8,
                 min_span=180.0, line_search=True, carve=True,
                 carve_fraction=0.0, refine_iterations=0):
        self.max_dim = max_dim
        self.iterations = iterations
        self.relaxation = relaxation
        self.subsets = subsets
        self.tolerance = tolerance
        self.photo_tolerance = photo_tolerance
        self.alpha_max = alpha_max
        self.alpha_min = alpha_min
        self.min_views = min_views
        self.min_span = min_span
        self.line_search = line_search
        self.carve = carve
        self.carve_fraction = carve_fraction
        self.refine_iterations = refine_iterations

    @classmethod
    def from_config(cls, cfg: GridConfig) -> "VoxelReconstructor":
        names = cls._get_param_names()
        return cls(**{n: getattr(cfg, n) for n in names})

    def _check_views(self, views, box: Box):
        if len(views) < self.min_views:
            raise InsufficientCoverage(f"{len(views)} views < {self.min_views}")
        span = azimuth_span([v.pose.position for v in views], box.center)
        if span < self.min_span:
            raise InsufficientCoverage(f"views span {span:.1f} deg < {self.min_span} deg")

    def fit(self, views, enclosure: Box, y=None):
        views = list(views)
        if enclosure.is_empty:
            raise EmptyIntersection("enclosure is empty")
        self._check_views(views, enclosure)
        grid = VoxelGrid.covering(enclosure, self.max_dim)
        proj = build_projection(views, grid)
        alpha, rgb, bg, emitted, confident = _views_measurements(views, self.alpha_max, self.alpha_min)
        tau_meas = -np.log1p(-alpha)
        weight = np.abs(emitted - bg).mean(axis=1)
        n_pix = len(alpha)
        A = proj.matrix
        trans_meas = 1.0 - alpha

        def objective(p):
            return float(np.sum(weight * np.abs(np.exp(-p) - trans_meas)) / n_pix)

        # ordered subsets: views interleaved by index so each subset spans the circle
        n_sub = max(1, min(self.subsets, len(views)))
        subset_rows = [np.nonzero(proj.view_of_row % n_sub == s)[0] for s in range(n_sub)]
        blocks = [(A[rows], tau_meas[rows]) for rows in subset_rows]
        numerators = [Ab.T @ tb for Ab, tb in blocks]

        path = np.asarray(A.sum(axis=0)).ravel()
        seen = path > 0
        if self.carve:
            # near-transparent rays bound the voxels they cross to near zero;
            # carve_fraction > 0 lets the clear share of path length outvote a few rays
            clear = (alpha <= self.alpha_min).astype(float)
            seen &= (A.T @ clear) <= self.carve_fraction * path
        sigma = np.zeros(A.shape[1])
        sigma[seen] = tau_meas.sum() / max(path.sum(), 1e-12)
        p = A @ sigma
        report = ReconstructionReport(_tol=self.photo_tolerance)
        current = objective(p)
        report.objective.append(current)
        lam = self.relaxation
        consecutive_bad = 0
        for it in range(self.iterations):
            report.iterations = it + 1
            cand = sigma.copy()
            for (Ab, _), num in zip(blocks, numerators):
                den = Ab.T @ (Ab @ cand)
                ratio = np.zeros_like(cand)
                ok = den > 0
                ratio[ok] = num[ok] / den[ok]
                cand = cand * ratio ** lam
            p_cand = A @ cand
            value = objective(p_cand)
            if value <= current:
                gain = (current - value) / max(current, 1e-300)
                sigma, p, current = cand, p_cand, value
                report.objective.append(current)
                consecutive_bad = 0
                if gain < self.tolerance:
                    break
                continue
            consecutive_bad += 1
            if not self.line_search:
                sigma, p, current = cand, p_cand, value
                report.objective.append(current)
                if consecutive_bad >= 10:
                    raise Divergence("photometric error rose for 10 consecutive iterations")
                continue
            report.rejected += 1
            lam *= 0.5
            if consecutive_bad >= 10:
                break
        comp = _Compositor.from_projection(proj, rgb, bg).pruned(sigma)
        if len(comp.idx) == 0:
            # every ray was clear: an empty grid, nothing to color
            log.info("no occupied voxel survived carving")
            rgb_vox = np.zeros((A.shape[1], 3))
        else:
            rgb_vox = comp.backproject_colors(sigma, emitted)
            if self.refine_iterations > 0:
                sigma, rgb_vox = comp.refine(sigma, rgb_vox, self.refine_iterations, report)
        sigma_grid = sigma.reshape(grid.dims)
        grid = VoxelGrid(grid.origin, grid.voxel_size, sigma_grid, rgb_vox.reshape(grid.dims + (3,)))
        rendered, _, _ = composite(proj, sigma, rgb_vox, bg)
        err = np.abs(rendered - rgb).mean(axis=1)
        report.view_errors = np.array([err[proj.view_of_row == v].mean() for v in range(len(views))])
        if not report.photometric_ok:
            log.warning("photometric error %.4f exceeds %.3f on some view",
                        report.view_errors.max(), self.photo_tolerance)
        self.grid_ = grid
        self.report_ = report
        self.projection_ = proj
        return self

    def photometric_errors(self, views) -> np.ndarray:
        """Mean absolute error of the forward-rendered grid against each view."""
        check_is_fitted(self, "grid_")
        proj = build_projection(views, self.grid_)
        _, rgb, bg, _, _ = _views_measurements(views, self.alpha_max, self.alpha_min)
        rendered, _, _ = composite(proj, self.grid_.sigma.reshape(-1),
                                   self.grid_.rgb.reshape(-1, 3), bg)
        err = np.abs(rendered - rgb).mean(axis=1)
        return np.array([err[proj.view_of_row == v].mean() for v in range(len(views))])


def reconstruct_segment(views, enclosure: Box, config: GridConfig | None = None) -> VoxelGrid:
    est = VoxelReconstructor.from_config(config or GridConfig())
    return est.fit(views, enclosure).grid_


# -- post-processing ---------------------------------------------------------------


def crop_enclosure(grid: VoxelGrid, enclosure: Box) -> VoxelGrid:
    """Zero every voxel whose center lies outside ``enclosure``."""
    if grid.box.intersect(enclosure).is_empty:
        raise EmptyIntersection("enclosure does not intersect the grid")
    inside = enclosure.contains(grid.centers()).reshape(grid.dims)
    out = grid.copy()
    out.sigma[~inside] = 0.0
    out.rgb[~inside] = 0.0
    return out


def export_point_cloud(grid: VoxelGrid, threshold: float) -> PointCloud:
    if threshold <= 0:
        raise ValueError("density threshold must be positive")
    keep = grid.sigma.reshape(-1) > threshold
    idx = np.nonzero(keep)[0]
    ijk = np.stack(np.unravel_index(idx, grid.dims), axis=1)
    pts = grid.origin + (ijk + 0.5) * grid.voxel_size
    return PointCloud(pts, grid.rgb.reshape(-1, 3)[idx], RECONSTRUCTION_UNITS)


def scale_to_world(cloud: PointCloud, reconstructed_diameter: float, real_diameter: float,
                   center=(0.0, 0.0, 0.0)) -> PointCloud:
    """Uniform scale about the trajectory center so the drone path has its real size."""
    if reconstructed_diameter <= 0:
        raise NonPositiveDiameter("reconstructed trajectory diameter must be positive")
    s = real_diameter / reconstructed_diameter
    c = np.asarray(center, dtype=float)
    return PointCloud(c + s * (cloud.points - c), cloud.colors.copy(), WORLD_METERS)


def trajectory_circle(positions):
    """Best-fit circle through camera centers: (center (3,), diameter, plane normal).

    The orbit plane comes from PCA; the circle from an algebraic least-squares fit
    inside that plane.
    """
    p = np.asarray(positions, dtype=float)
    if len(p) < 3:
        raise ValueError("need at least three positions")
    mean = p.mean(axis=0)
    _, _, vt = np.linalg.svd(p - mean)
    e1, e2, normal = vt
    xy = np.column_stack([(p - mean) @ e1, (p - mean) @ e2])
    design = np.column_stack([2 * xy, np.ones(len(xy))])
    rhs = (xy ** 2).sum(axis=1)
    (a, b, c), *_ = np.linalg.lstsq(design, rhs, rcond=None)
    radius = np.sqrt(c + a * a + b * b)
    center = mean + a * e1 + b * e2
    return center, float(2 * radius), normal


# -- files -------------------------------------------------------------------------


def write_ply(path, cloud: PointCloud) -> None:
    rgb = np.round(np.clip(cloud.colors, 0, 1) * 255).astype(int)
    header = ["ply", "format ascii 1.0", f"comment units {cloud.units}",
              f"element vertex {len(cloud)}", "property float x", "property float y",
              "property float z", "property uchar red", "property uchar green",
              "property uchar blue", "end_header"]
    body = [f"{x:.6f} {y:.6f} {z:.6f} {r} {g} {b}"
            for (x, y, z), (r, g, b) in zip(cloud.points, rgb)]
    Path(path).write_text("\n".join(header + body) + "\n")


def read_ply(path) -> PointCloud:
    lines = Path(path).read_text().splitlines()
    units, n, i = RECONSTRUCTION_UNITS, 0, 0
    while lines[i] != "end_header":
        parts = lines[i].split()
        if parts[:2] == ["comment", "units"]:
            units = parts[2]
        elif parts[:2] == ["element", "vertex"]:
            n = int(parts[2])
        i += 1
    rows = [ln.split() for ln in lines[i + 1:i + 1 + n]]
    data = np.array(rows, dtype=float).reshape(-1, 6)
    return PointCloud(data[:, :3], data[:, 3:] / 255.0, units)


GRID_MAGIC = b"PSVG"


def save_grid(path, grid: VoxelGrid) -> None:
    """Header: magic, uint32 version, 3 x uint32 dims, 3 x float64 origin, float64 voxel size.
    Body: float32 sigma then float32 rgb, C order, little endian."""
    with open(path, "wb") as fh:
        fh.write(GRID_MAGIC)
        fh.write(struct.pack("<I3I3dd", 1, *grid.dims, *grid.origin, grid.voxel_size))
        fh.write(grid.sigma.astype("<f4").tobytes())
        fh.write(grid.rgb.astype("<f4").tobytes())


def load_grid(path) -> VoxelGrid:
    raw = Path(path).read_bytes()
    if raw[:4] != GRID_MAGIC:
        raise ValueError("not a voxel grid checkpoint")
    head = struct.calcsize("<I3I3dd")
    version, nx, ny, nz, ox, oy, oz, vs = struct.unpack("<I3I3dd", raw[4:4 + head])
    if version != 1:
        raise ValueError(f"unsupported grid version {version}")
    n = nx * ny * nz
    body = np.frombuffer(raw[4 + head:], dtype="<f4")
    sigma = body[:n].astype(float).reshape(nx, ny, nz)
    rgb = body[n:4 * n].astype(float).reshape(nx, ny, nz, 3)
    return VoxelGrid(np.array([ox, oy, oz]), vs, sigma, rgb)
