"""Incremental 3D convex hull (quickhull)."""
from __future__ import annotations

from collections import deque

import numpy as np


class DegenerateGeometry(ValueError):
    """All points collinear or coplanar: the hull has no interior."""

    volume = 0.0


class TooFewPoints(ValueError):
    pass


class _Facet:
    __slots__ = ("verts", "normal", "offset", "outside", "alive")

    def __init__(self, verts, points):
        a, b, c = (points[v] for v in verts)
        n = np.cross(b - a, c - a)
        self.verts = verts
        self.normal = n / np.linalg.norm(n)
        self.offset = float(self.normal @ a)
        self.outside = np.zeros(0, dtype=np.int64)
        self.alive = True

    def edges(self):
        a, b, c = self.verts
        return ((a, b), (b, c), (c, a))


def _initial_simplex(points, eps):
    ext = np.concatenate([points.argmin(axis=0), points.argmax(axis=0)])
    best, pair = -1.0, None
    for i in ext:
        for j in ext:
            d = np.linalg.norm(points[i] - points[j])
            if d > best:
                best, pair = d, (int(i), int(j))
    if best <= eps:
        raise DegenerateGeometry("all points coincide")
    i, j = pair
    u = (points[j] - points[i]) / best
    rel = points - points[i]
    perp = rel - np.outer(rel @ u, u)
    dist = np.linalg.norm(perp, axis=1)
    k = int(dist.argmax())
    if dist[k] <= eps:
        raise DegenerateGeometry("all points are collinear")
    n = np.cross(points[j] - points[i], points[k] - points[i])
    n /= np.linalg.norm(n)
    h = rel @ n
    m = int(np.abs(h).argmax())
    if abs(h[m]) <= eps:
        raise DegenerateGeometry("all points are coplanar")
    return i, j, k, m


class ConvexHull3D:
    """Quickhull over an (N, 3) array.

    Attributes after construction: ``simplices`` (F, 3) outward-oriented vertex
    index triples, ``vertices`` (sorted unique indices), ``volume``, ``area``.
    Raises ``TooFewPoints`` below 4 points and ``DegenerateGeometry`` when the
    points span less than three dimensions.
    """

    def __init__(self, points):
        pts = np.asarray(points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValueError("points must have shape (N, 3)")
        if len(pts) < 4:
            raise TooFewPoints(f"{len(pts)} points; a 3D hull needs at least 4")
        if not np.all(np.isfinite(pts)):
            raise ValueError("points must be finite")
        self.points = pts
        span = np.abs(pts).max(axis=0).sum()
        self.eps = 1e-12 * max(span, 1.0) * 64
        self._build()

    def _build(self):
        pts, eps = self.points, self.eps
        i, j, k, m = _initial_simplex(pts, eps)
        self.interior = pts[[i, j, k, m]].mean(axis=0)
        facets: list[_Facet] = []
        edge_owner: dict[tuple[int, int], int] = {}

        def add(verts):
            f = _Facet(verts, pts)
            if f.normal @ self.interior - f.offset > 0:
                f = _Facet((verts[0], verts[2], verts[1]), pts)
            facets.append(f)
            fid = len(facets) - 1
            for e in f.edges():
                edge_owner[e] = fid
            return fid

        first = [add(v) for v in ((i, j, k), (i, j, m), (i, k, m), (j, k, m))]
        candidates = np.setdiff1d(np.arange(len(pts)), [i, j, k, m])
        self._assign(candidates, [facets[f] for f in first])

        pending = deque(f for f in first if len(facets[f].outside))
        while pending:
            fid = pending.popleft()
            f = facets[fid]
            if not f.alive or len(f.outside) == 0:
                continue
            d = pts[f.outside] @ f.normal - f.offset
            eye = int(f.outside[d.argmax()])
            p = pts[eye]
            visible = {fid}
            queue = deque([fid])
            horizon = []
            while queue:
                cur = facets[queue.popleft()]
                for a, b in cur.edges():
                    nid = edge_owner[(b, a)]
                    if nid in visible:
                        continue
                    nb = facets[nid]
                    if nb.normal @ p - nb.offset > eps:
                        visible.add(nid)
                        queue.append(nid)
                    else:
                        horizon.append((a, b))
            orphans = []
            for vid in visible:
                vf = facets[vid]
                vf.alive = False
                orphans.append(vf.outside)
                for e in vf.edges():
                    if edge_owner.get(e) == vid:
                        del edge_owner[e]
            new = [add((a, b, eye)) for a, b in horizon]
            orphans = np.concatenate(orphans)
            orphans = orphans[orphans != eye]
            self._assign(orphans, [facets[n] for n in new])
            pending.extend(n for n in new if len(facets[n].outside))

        alive = [f for f in facets if f.alive]
        self.simplices = np.array([f.verts for f in alive], dtype=np.int64)
        self.vertices = np.unique(self.simplices)
        a, b, c = (pts[self.simplices[:, t]] for t in range(3))
        o = self.interior
        self.volume = float(np.einsum("ij,ij->i", a - o, np.cross(b - o, c - o)).sum() / 6.0)
        self.area = float(0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1).sum())

    def _assign(self, idx, facets):
        """Give each point to the facet it lies farthest outside of (if any)."""
        if len(idx) == 0 or not facets:
            return
        normals = np.array([f.normal for f in facets])
        offsets = np.array([f.offset for f in facets])
        d = self.points[idx] @ normals.T - offsets
        best = d.argmax(axis=1)
        out = d[np.arange(len(idx)), best] > self.eps
        for n, f in enumerate(facets):
            f.outside = idx[out & (best == n)]

    def contains(self, queries, tol=None) -> np.ndarray:
        q = np.atleast_2d(np.asarray(queries, dtype=float))
        tol = self.eps if tol is None else tol
        a = self.points[self.simplices[:, 0]]
        n = np.cross(self.points[self.simplices[:, 1]] - a, self.points[self.simplices[:, 2]] - a)
        n /= np.linalg.norm(n, axis=1, keepdims=True)
        off = np.einsum("ij,ij->i", n, a)
        return np.all(q @ n.T - off <= tol, axis=1)
