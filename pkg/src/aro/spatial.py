"""Exact conical top-k queries over point clouds.

Ranking rule, shared by every code path:

* tier 1: points whose angular deviation from the cone axis is at most the
  half angle, ordered by Euclidean distance to the apex, then point index;
* tier 2 (padding only, when tier 1 holds fewer than ``k`` points): the
  remaining points ordered by angular deviation, then distance, then index.

Angular deviation is compared through its cosine ``dot(p - apex, u) / |p - apex|``
with every path evaluating that expression in the same operation order, so
the indexed queries agree with brute force elementwise. A point on the apex has
deviation 0.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass

import numba as nb
import numpy as np
from scipy.spatial import cKDTree

from ._validation import as_vector, check_count, check_half_angle
from .geometry import PointCloud

DEFAULT_HALF_ANGLE = np.deg2rad(24.0)
DEFAULT_K = 16
CUBE_BINS = 8
_ANGLE_SLACK = 1e-7
_VIEW_CACHE = 256


@dataclass(frozen=True)
class ConeQuery:
    apex: np.ndarray
    axis: np.ndarray
    half_angle: float = DEFAULT_HALF_ANGLE
    k: int = DEFAULT_K

    def __post_init__(self):
        apex = as_vector(self.apex, 3, "apex")
        axis = as_vector(self.axis, 3, "axis")
        if not np.linalg.norm(axis) > 0:
            raise ValueError("cone axis must be nonzero")
        object.__setattr__(self, "apex", apex)
        object.__setattr__(self, "axis", axis)
        object.__setattr__(self, "half_angle", check_half_angle(self.half_angle))
        object.__setattr__(self, "k", check_count(self.k, "k"))

    @property
    def unit_axis(self) -> np.ndarray:
        return unit(self.axis)


@dataclass(frozen=True)
class ConeHits:
    """Ranked cone query result; ``in_cone`` is False for tier-2 padding."""

    indices: np.ndarray
    points: np.ndarray
    distances: np.ndarray
    angles: np.ndarray
    in_cone: np.ndarray

    def __len__(self) -> int:
        return len(self.indices)


def unit(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    n = np.sqrt(v[..., 0] * v[..., 0] + v[..., 1] * v[..., 1] + v[..., 2] * v[..., 2])
    return v / n[..., None] if v.ndim > 1 else v / n


def cone_metrics(points: np.ndarray, apex, u):
    """Distance to ``apex`` and cosine of the deviation from unit axis ``u``."""
    dx = points[:, 0] - apex[0]
    dy = points[:, 1] - apex[1]
    dz = points[:, 2] - apex[2]
    dist = np.sqrt(dx * dx + dy * dy + dz * dz)
    dot = dx * u[0] + dy * u[1] + dz * u[2]
    with np.errstate(invalid="ignore", divide="ignore"):
        cos = np.where(dist > 0.0, dot / dist, 1.0)
    return dist, cos


def _deviation(cos: np.ndarray) -> np.ndarray:
    return np.arccos(np.clip(cos, -1.0, 1.0))


def rank_brute_force(points: np.ndarray, q: ConeQuery) -> np.ndarray:
    """Reference ranking by full sort over every point. Returns point indices."""
    dist, cos = cone_metrics(points, q.apex, q.unit_axis)
    idx = np.arange(len(points))
    inside = cos >= np.cos(q.half_angle)
    t1 = idx[inside][np.lexsort((idx[inside], dist[inside]))]
    if len(t1) >= q.k:
        return t1[: q.k]
    out = idx[~inside]
    t2 = out[np.lexsort((out, dist[out], -cos[out]))]
    return np.concatenate([t1, t2[: q.k - len(t1)]])


class SpatialIndex:
    """Immutable index over a point cloud answering exact cone queries.

    One-off queries use a k-d tree with an expanding neighbour count. Batches
    sharing an apex (the anchor case) use a per-apex direction index: points
    binned on a cube map around the apex, each bin sorted by distance, so a
    query only scans bins that can intersect its cone.
    """

    def __init__(self, cloud):
        pts = cloud.points if isinstance(cloud, PointCloud) else PointCloud(cloud).points
        self.points = pts
        self.tree = cKDTree(pts)
        self._views: OrderedDict = OrderedDict()

    @property
    def n(self) -> int:
        return len(self.points)

    def view(self, apex, half_angle: float = DEFAULT_HALF_ANGLE) -> "ApexView":
        apex = as_vector(apex, 3, "apex")
        key = (apex.tobytes(), float(half_angle))
        v = self._views.get(key)
        if v is None:
            v = ApexView(self.points, apex, half_angle)
            self._views[key] = v
            if len(self._views) > _VIEW_CACHE:
                self._views.popitem(last=False)
        else:
            self._views.move_to_end(key)
        return v

    def query(self, q: ConeQuery) -> ConeHits:
        idx = self._rank_kd(q)
        return self._hits(q, idx)

    def _hits(self, q: ConeQuery, idx: np.ndarray) -> ConeHits:
        pts = self.points[idx]
        dist, cos = cone_metrics(pts, q.apex, q.unit_axis)
        return ConeHits(idx, pts, dist, _deviation(cos), cos >= np.cos(q.half_angle))

    def _rank_kd(self, q: ConeQuery) -> np.ndarray:
        n, k = self.n, min(q.k, self.n)
        u = q.unit_axis
        cos_half = np.cos(q.half_angle)
        kk = min(n, max(8 * k, 64))
        while True:
            kd_dist, cand = self.tree.query(q.apex, kk)
            cand = np.atleast_1d(cand)
            kd_dist = np.atleast_1d(kd_dist)
            dist, cos = cone_metrics(self.points[cand], q.apex, u)
            inside = cos >= cos_half
            if kk == n:
                break
            if inside.sum() >= k:
                ci, cd = cand[inside], dist[inside]
                order = np.lexsort((ci, cd))
                # unseen points are at least kd_dist[-1] away
                if cd[order[k - 1]] < kd_dist[-1] * (1.0 - 1e-12) - 1e-15:
                    return ci[order[:k]]
            kk = min(n, kk * 4)
        # every point seen: fall back to the full ranking
        return rank_brute_force(self.points, q)[:k]


def build_index(cloud) -> SpatialIndex:
    return SpatialIndex(cloud)


def cone_top_k(index: SpatialIndex, q: ConeQuery) -> ConeHits:
    return index.query(q)


# ---------------------------------------------------------------------------
# per-apex direction index


@nb.njit(cache=True, inline="always")
def _cube_cell(x, y, z, g):
    ax_ = abs(x)
    ay_ = abs(y)
    az_ = abs(z)
    if ax_ >= ay_ and ax_ >= az_:
        axis, major, a, b = 0, x, y, z
    elif ay_ >= az_:
        axis, major, a, b = 1, y, z, x
    else:
        axis, major, a, b = 2, z, x, y
    face = 2 * axis + (1 if major < 0.0 else 0)
    m = abs(major)
    i = int((a / m + 1.0) * 0.5 * g)
    j = int((b / m + 1.0) * 0.5 * g)
    i = min(max(i, 0), g - 1)
    j = min(max(j, 0), g - 1)
    return (face * g + i) * g + j


@nb.njit(cache=True)
def _cells_of(dx, dy, dz, g):
    out = np.empty(len(dx), dtype=np.int64)
    for p in range(len(dx)):
        out[p] = _cube_cell(dx[p], dy[p], dz[p], g)
    return out


def _cell_geometry(g: int):
    """Center direction and angular radius of every cube-map cell."""
    edges = np.linspace(-1.0, 1.0, g + 1)
    centers, radii = [], []
    for face in range(6):
        axis, sign = face // 2, (-1.0 if face % 2 else 1.0)
        for i in range(g):
            for j in range(g):
                def vec(a, b):
                    v = np.zeros(3)
                    v[axis] = sign
                    v[(axis + 1) % 3] = a
                    v[(axis + 2) % 3] = b
                    return v / np.linalg.norm(v)

                c = vec(0.5 * (edges[i] + edges[i + 1]), 0.5 * (edges[j] + edges[j + 1]))
                corners = [vec(edges[i + a], edges[j + b]) for a in (0, 1) for b in (0, 1)]
                rad = max(np.arccos(np.clip(c @ q, -1.0, 1.0)) for q in corners)
                centers.append(c)
                radii.append(rad)
    return np.array(centers), np.array(radii)


_CELL_GEOM: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def _geometry(g: int):
    if g not in _CELL_GEOM:
        _CELL_GEOM[g] = _cell_geometry(g)
    return _CELL_GEOM[g]


class ApexView:
    """Points seen from a fixed apex, bucketed by direction and sorted by distance."""

    def __init__(self, points: np.ndarray, apex: np.ndarray, half_angle: float, bins: int = CUBE_BINS):
        self.points = points
        self.apex = np.asarray(apex, dtype=np.float64)
        self.half_angle = check_half_angle(half_angle)
        self.cos_half = float(np.cos(self.half_angle))
        g = self.bins = bins
        a = self.apex
        dx = points[:, 0] - a[0]
        dy = points[:, 1] - a[1]
        dz = points[:, 2] - a[2]
        dist = np.sqrt(dx * dx + dy * dy + dz * dz)
        idx = np.arange(len(points))
        zero = dist == 0.0
        self.zero = idx[zero]
        cells = _cells_of(dx[~zero], dy[~zero], dz[~zero], g)
        nz = idx[~zero]
        order = np.lexsort((nz, dist[~zero], cells))
        self.order = nz[order]
        n_cells = 6 * g * g
        self.cell_start = np.searchsorted(cells[order], np.arange(n_cells + 1)).astype(np.int64)
        centers, radii = _geometry(g)
        self.centers = centers
        self.radii = radii
        bound = self.half_angle + radii + _ANGLE_SLACK
        self.cell_cos = np.where(bound < np.pi, np.cos(np.minimum(bound, np.pi)), -2.0)
        # cells that can meet a cone whose axis lies in a given cell
        pair = np.arccos(np.clip(centers @ centers.T, -1.0, 1.0))
        reach = pair <= self.half_angle + radii[:, None] + radii[None, :] + 2 * _ANGLE_SLACK
        self.nbr_start = np.concatenate([[0], np.cumsum(reach.sum(axis=1))]).astype(np.int64)
        self.nbr = np.nonzero(reach)[1].astype(np.int64)

    def top_k(self, axes, k: int):
        """Rank indices for unit axes ``(q, 3)``: returns ``(idx (q, k), n_in_cone (q,))``.

        Rows with fewer than ``k`` in-cone points are padded by the tier-2 rule.
        """
        u = np.ascontiguousarray(np.atleast_2d(axes), dtype=np.float64)
        k = min(int(k), len(self.points))
        idx, n_in = _view_top_k(self.points, self.apex, u, k, self.cos_half, self.bins, self.order,
                                self.cell_start, self.centers, self.cell_cos, self.nbr_start,
                                self.nbr, self.zero)
        short = np.nonzero(n_in < k)[0]
        if len(short):
            _pad_tier2(self.points, self.apex, u, idx, n_in, short, self.cos_half, self.order,
                       self.cell_start, self.centers, self.radii)
        return idx, n_in

    def nearest_in_cone(self, axes) -> np.ndarray:
        """Index of the nearest in-cone point per axis, -1 when the cone is empty."""
        u = np.ascontiguousarray(np.atleast_2d(axes), dtype=np.float64)
        idx, _ = _view_top_k(self.points, self.apex, u, 1, self.cos_half, self.bins, self.order,
                             self.cell_start, self.centers, self.cell_cos, self.nbr_start,
                             self.nbr, self.zero)
        return idx[:, 0]


@nb.njit(cache=True, inline="always")
def _metric(points, apex, j, ux, uy, uz):
    dx = points[j, 0] - apex[0]
    dy = points[j, 1] - apex[1]
    dz = points[j, 2] - apex[2]
    dist = np.sqrt(dx * dx + dy * dy + dz * dz)
    dot = dx * ux + dy * uy + dz * uz
    if dist > 0.0:
        return dist, dot / dist
    return dist, 1.0


@nb.njit(cache=True, inline="always")
def _insert(bd, bi, filled, k, d, j):
    # keep (bd, bi) sorted by (distance, index); returns new fill count
    if filled == k:
        if d > bd[k - 1] or (d == bd[k - 1] and j > bi[k - 1]):
            return filled
        pos = k - 1
    else:
        pos = filled
        filled += 1
    while pos > 0 and (bd[pos - 1] > d or (bd[pos - 1] == d and bi[pos - 1] > j)):
        bd[pos] = bd[pos - 1]
        bi[pos] = bi[pos - 1]
        pos -= 1
    bd[pos] = d
    bi[pos] = j
    return filled


@nb.njit(cache=True)
def _view_top_k(points, apex, u, k, cos_half, g, order, cell_start, centers, cell_cos,
                nbr_start, nbr, zero):
    q = u.shape[0]
    out = np.full((q, k), -1, dtype=np.int64)
    n_in = np.zeros(q, dtype=np.int64)
    bd = np.empty(k)
    bi = np.empty(k, dtype=np.int64)
    for r in range(q):
        ux, uy, uz = u[r, 0], u[r, 1], u[r, 2]
        filled = 0
        for z in range(len(zero)):
            filled = _insert(bd, bi, filled, k, 0.0, zero[z])
        c0 = _cube_cell(ux, uy, uz, g)
        for t in range(nbr_start[c0], nbr_start[c0 + 1]):
            c = nbr[t]
            if centers[c, 0] * ux + centers[c, 1] * uy + centers[c, 2] * uz < cell_cos[c]:
                continue
            taken = 0
            for s in range(cell_start[c], cell_start[c + 1]):
                j = order[s]
                d, cs = _metric(points, apex, j, ux, uy, uz)
                if filled == k and d > bd[k - 1]:
                    break
                if cs >= cos_half:
                    filled = _insert(bd, bi, filled, k, d, j)
                    taken += 1
                    if taken == k:
                        break
        for s in range(filled):
            out[r, s] = bi[s]
        n_in[r] = filled
    return out, n_in


@nb.njit(cache=True)
def _pad_tier2(points, apex, u, out, n_in, rows, cos_half, order, cell_start, centers, radii):
    # tier 2: out-of-cone points by (deviation, distance, index), i.e. (-cos, dist, idx);
    # cells are visited by increasing lower bound on deviation
    k = out.shape[1]
    n_cells = len(cell_start) - 1
    kc = np.empty(k)
    kd = np.empty(k)
    ki = np.empty(k, dtype=np.int64)
    lb = np.empty(n_cells)
    for rr in range(len(rows)):
        r = rows[rr]
        need = k - n_in[r]
        ux, uy, uz = u[r, 0], u[r, 1], u[r, 2]
        for c in range(n_cells):
            dc = centers[c, 0] * ux + centers[c, 1] * uy + centers[c, 2] * uz
            lb[c] = np.arccos(min(1.0, max(-1.0, dc))) - radii[c] - 1e-7
        visit = np.argsort(lb)
        filled = 0
        for vv in range(n_cells):
            c = visit[vv]
            if filled == need and lb[c] > np.arccos(min(1.0, max(-1.0, -kc[need - 1]))) + 1e-7:
                break
            for s in range(cell_start[c], cell_start[c + 1]):
                j = order[s]
                d, cs = _metric(points, apex, j, ux, uy, uz)
                if cs >= cos_half:
                    continue
                c2 = -cs
                if filled == need:
                    last = need - 1
                    if c2 > kc[last] or (c2 == kc[last] and (d > kd[last] or (d == kd[last] and j > ki[last]))):
                        continue
                    pos = last
                else:
                    pos = filled
                    filled += 1
                while pos > 0 and (kc[pos - 1] > c2 or (kc[pos - 1] == c2 and (kd[pos - 1] > d or (kd[pos - 1] == d and ki[pos - 1] > j)))):
                    kc[pos] = kc[pos - 1]
                    kd[pos] = kd[pos - 1]
                    ki[pos] = ki[pos - 1]
                    pos -= 1
                kc[pos] = c2
                kd[pos] = d
                ki[pos] = j
        for s in range(filled):
            out[r, n_in[r] + s] = ki[s]
