"""Bounding-volume hierarchy over triangles with numba ray kernels.

All kernels use the edge-inclusive Möller–Trumbore test and ignore hits with
``t <= HIT_EPS`` so rays leaving a surface do not re-hit it.
"""

from __future__ import annotations

import numba as nb
import numpy as np

from .geometry import HIT_EPS

# prefer OpenMP, which tolerates kernels launched from several Python threads;
# this also skips probing an outdated TBB install
nb.config.THREADING_LAYER_PRIORITY = ["omp", "tbb", "workqueue"]

LEAF_SIZE = 4
_STACK = 64
# barycentric slack for nearest/any-hit queries so a ray through a shared edge
# cannot slip between both triangles; hit counting stays exact
BARY_SLACK = 1e-12


class BVH:
    """Flattened BVH. Construction is deterministic for a given triangle list."""

    def __init__(self, corners: np.ndarray):
        corners = np.ascontiguousarray(corners, dtype=np.float64).reshape(-1, 3, 3)
        self.n_triangles = len(corners)
        lo_list, hi_list, left, right, start, count = [], [], [], [], [], []
        order = np.arange(len(corners))
        cent = corners.mean(axis=1)
        tri_lo = corners.min(axis=1)
        tri_hi = corners.max(axis=1)

        def new_node():
            lo_list.append(None)
            hi_list.append(None)
            left.append(-1)
            right.append(-1)
            start.append(0)
            count.append(0)
            return len(left) - 1

        root = new_node()
        stack = [(root, 0, len(order))]
        while stack:
            node, s, e = stack.pop()
            idx = order[s:e]
            lo_list[node] = tri_lo[idx].min(axis=0) if e > s else np.zeros(3)
            hi_list[node] = tri_hi[idx].max(axis=0) if e > s else np.zeros(3)
            if e - s <= LEAF_SIZE:
                start[node], count[node] = s, e - s
                continue
            c = cent[idx]
            axis = int(np.argmax(c.max(axis=0) - c.min(axis=0)))
            perm = np.argsort(c[:, axis], kind="stable")
            order[s:e] = idx[perm]
            mid = s + (e - s) // 2
            li, ri = new_node(), new_node()
            left[node], right[node] = li, ri
            stack.append((ri, mid, e))
            stack.append((li, s, mid))

        self.node_lo = np.array(lo_list, dtype=np.float64).reshape(-1, 3)
        self.node_hi = np.array(hi_list, dtype=np.float64).reshape(-1, 3)
        self.left = np.array(left, dtype=np.int64)
        self.right = np.array(right, dtype=np.int64)
        self.start = np.array(start, dtype=np.int64)
        self.count = np.array(count, dtype=np.int64)
        tri = corners[order]
        self.v0 = np.ascontiguousarray(tri[:, 0])
        self.e1 = np.ascontiguousarray(tri[:, 1] - tri[:, 0])
        self.e2 = np.ascontiguousarray(tri[:, 2] - tri[:, 0])

    @property
    def arrays(self):
        return (self.node_lo, self.node_hi, self.left, self.right, self.start, self.count,
                self.v0, self.e1, self.e2)

    def first_hit(self, origins, directions) -> np.ndarray:
        """Distance to the nearest hit per ray, ``inf`` on a miss."""
        o, d = _rays(origins, directions)
        return _first_hit_batch(o, d, *self.arrays)

    def occluded(self, origins, directions, tmax) -> np.ndarray:
        """True where some hit lies in ``(HIT_EPS, tmax)``."""
        o, d = _rays(origins, directions)
        tm = np.broadcast_to(np.asarray(tmax, dtype=np.float64), (len(o),)).copy()
        return _any_hit_batch(o, d, tm, *self.arrays)

    def count_hits(self, origins, directions, tmax=np.inf) -> np.ndarray:
        """Number of surface hits in ``(HIT_EPS, tmax)`` per ray."""
        o, d = _rays(origins, directions)
        tm = np.broadcast_to(np.asarray(tmax, dtype=np.float64), (len(o),)).copy()
        return _count_hits_batch(o, d, tm, *self.arrays)


def _rays(origins, directions):
    o = np.atleast_2d(np.asarray(origins, dtype=np.float64))
    d = np.atleast_2d(np.asarray(directions, dtype=np.float64))
    o, d = np.broadcast_arrays(o, d)
    return np.ascontiguousarray(o), np.ascontiguousarray(d)


@nb.njit(cache=True, inline="always")
def _tri_hit(ox, oy, oz, dx, dy, dz, v0, e1, e2, i, slack):
    # edge-inclusive Möller–Trumbore; returns -1.0 on a miss
    e1x, e1y, e1z = e1[i, 0], e1[i, 1], e1[i, 2]
    e2x, e2y, e2z = e2[i, 0], e2[i, 1], e2[i, 2]
    px = dy * e2z - dz * e2y
    py = dz * e2x - dx * e2z
    pz = dx * e2y - dy * e2x
    det = e1x * px + e1y * py + e1z * pz
    n1 = np.sqrt(e1x * e1x + e1y * e1y + e1z * e1z)
    n2 = np.sqrt(e2x * e2x + e2y * e2y + e2z * e2z)
    if abs(det) <= 1e-14 * n1 * n2 or n1 * n2 == 0.0:
        return -1.0
    inv = 1.0 / det
    sx = ox - v0[i, 0]
    sy = oy - v0[i, 1]
    sz = oz - v0[i, 2]
    u = (sx * px + sy * py + sz * pz) * inv
    if u < -slack or u > 1.0 + slack:
        return -1.0
    qx = sy * e1z - sz * e1y
    qy = sz * e1x - sx * e1z
    qz = sx * e1y - sy * e1x
    w = (dx * qx + dy * qy + dz * qz) * inv
    if w < -slack or u + w > 1.0 + slack:
        return -1.0
    return (e2x * qx + e2y * qy + e2z * qz) * inv


@nb.njit(cache=True, inline="always")
def _box_enter(ox, oy, oz, ix, iy, iz, lo, hi, node, tmax):
    t0x = (lo[node, 0] - ox) * ix
    t1x = (hi[node, 0] - ox) * ix
    t0y = (lo[node, 1] - oy) * iy
    t1y = (hi[node, 1] - oy) * iy
    t0z = (lo[node, 2] - oz) * iz
    t1z = (hi[node, 2] - oz) * iz
    tn = max(min(t0x, t1x), min(t0y, t1y), min(t0z, t1z))
    tf = min(max(t0x, t1x), max(t0y, t1y), max(t0z, t1z))
    if tf < 0.0 or tn > tf or tn > tmax:
        return False
    return True


@nb.njit(cache=True, inline="always")
def _inv(d):
    if d == 0.0:
        return 1e300
    return 1.0 / d


@nb.njit(cache=True)
def _trace(ox, oy, oz, dx, dy, dz, tmax, mode, lo, hi, left, right, start, count, v0, e1, e2):
    # mode 0: nearest hit distance; 1: any hit (returns 1.0/0.0); 2: hit count
    ix, iy, iz = _inv(dx), _inv(dy), _inv(dz)
    slack = BARY_SLACK if mode != 2 else 0.0
    stack = np.empty(_STACK, dtype=np.int64)
    sp = 0
    stack[sp] = 0
    sp += 1
    best = tmax
    hits = 0
    while sp > 0:
        sp -= 1
        node = stack[sp]
        if not _box_enter(ox, oy, oz, ix, iy, iz, lo, hi, node, best if mode == 0 else tmax):
            continue
        if left[node] < 0:
            for i in range(start[node], start[node] + count[node]):
                t = _tri_hit(ox, oy, oz, dx, dy, dz, v0, e1, e2, i, slack)
                if t > HIT_EPS and t < tmax:
                    if mode == 1:
                        return 1.0
                    if mode == 2:
                        hits += 1
                    elif t < best:
                        best = t
        else:
            stack[sp] = left[node]
            stack[sp + 1] = right[node]
            sp += 2
    if mode == 0:
        return best
    if mode == 1:
        return 0.0
    return float(hits)


@nb.njit(cache=True, parallel=True)
def _first_hit_batch(o, d, lo, hi, left, right, start, count, v0, e1, e2):
    out = np.empty(len(o))
    for r in nb.prange(len(o)):
        out[r] = _trace(o[r, 0], o[r, 1], o[r, 2], d[r, 0], d[r, 1], d[r, 2], np.inf, 0,
                        lo, hi, left, right, start, count, v0, e1, e2)
    return out


@nb.njit(cache=True, parallel=True)
def _any_hit_batch(o, d, tmax, lo, hi, left, right, start, count, v0, e1, e2):
    out = np.empty(len(o), dtype=np.bool_)
    for r in nb.prange(len(o)):
        out[r] = _trace(o[r, 0], o[r, 1], o[r, 2], d[r, 0], d[r, 1], d[r, 2], tmax[r], 1,
                        lo, hi, left, right, start, count, v0, e1, e2) > 0.5
    return out


@nb.njit(cache=True, parallel=True)
def _count_hits_batch(o, d, tmax, lo, hi, left, right, start, count, v0, e1, e2):
    out = np.empty(len(o), dtype=np.int64)
    for r in nb.prange(len(o)):
        out[r] = int(_trace(o[r, 0], o[r, 1], o[r, 2], d[r, 0], d[r, 1], d[r, 2], tmax[r], 2,
                            lo, hi, left, right, start, count, v0, e1, e2))
    return out


@nb.njit(cache=True)
def _count_checked(ox, oy, oz, dx, dy, dz, tol, lo, hi, left, right, start, count, v0, e1, e2):
    # hit count along the whole ray; -1 when a hit lies within ``tol`` of a
    # triangle edge or the ray runs nearly parallel to a hit triangle
    ix, iy, iz = _inv(dx), _inv(dy), _inv(dz)
    stack = np.empty(_STACK, dtype=np.int64)
    sp = 1
    stack[0] = 0
    hits = 0
    while sp > 0:
        sp -= 1
        node = stack[sp]
        if not _box_enter(ox, oy, oz, ix, iy, iz, lo, hi, node, np.inf):
            continue
        if left[node] >= 0:
            stack[sp] = left[node]
            stack[sp + 1] = right[node]
            sp += 2
            continue
        for i in range(start[node], start[node] + count[node]):
            e1x, e1y, e1z = e1[i, 0], e1[i, 1], e1[i, 2]
            e2x, e2y, e2z = e2[i, 0], e2[i, 1], e2[i, 2]
            px = dy * e2z - dz * e2y
            py = dz * e2x - dx * e2z
            pz = dx * e2y - dy * e2x
            det = e1x * px + e1y * py + e1z * pz
            n1 = np.sqrt(e1x * e1x + e1y * e1y + e1z * e1z)
            n2 = np.sqrt(e2x * e2x + e2y * e2y + e2z * e2z)
            if n1 * n2 == 0.0:
                continue
            inv = 1.0 / det if det != 0.0 else 0.0
            sx = ox - v0[i, 0]
            sy = oy - v0[i, 1]
            sz = oz - v0[i, 2]
            u = (sx * px + sy * py + sz * pz) * inv
            qx = sy * e1z - sz * e1y
            qy = sz * e1x - sx * e1z
            qz = sx * e1y - sy * e1x
            w = (dx * qx + dy * qy + dz * qz) * inv
            t = (e2x * qx + e2y * qy + e2z * qz) * inv
            if det == 0.0:
                continue
            if u < -tol or w < -tol or u + w > 1.0 + tol or t <= HIT_EPS:
                continue
            if u < tol or w < tol or u + w > 1.0 - tol or abs(det) < 1e-6 * n1 * n2:
                return -1
            hits += 1
    return hits


@nb.njit(cache=True, parallel=True)
def _count_checked_batch(o, d, tol, lo, hi, left, right, start, count, v0, e1, e2):
    out = np.empty(len(o), dtype=np.int64)
    for r in nb.prange(len(o)):
        out[r] = _count_checked(o[r, 0], o[r, 1], o[r, 2], d[r, 0], d[r, 1], d[r, 2], tol,
                                lo, hi, left, right, start, count, v0, e1, e2)
    return out


def count_hits_checked(bvh: BVH, origins, directions, tol: float = 1e-7) -> np.ndarray:
    """Like ``BVH.count_hits`` but returns -1 for rays that graze an edge."""
    o, d = _rays(origins, directions)
    return _count_checked_batch(o, d, tol, *bvh.arrays)
