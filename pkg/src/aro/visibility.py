"""Exact anchor visibility against a watertight mesh and the occupancy oracles.

An anchor *covers* a point when the point lies strictly in front of the first
surface hit along the ray from the anchor (rays that miss are clipped by the
bounding box). Interior anchors that together see the whole surface cover
exactly the interior; exterior anchors cover exactly the exterior. With a mixed
set, cells covered by neither are resolved by flood fill over the grid.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from ._bvh import BVH, count_hits_checked
from ._validation import as_points, as_vector, check_count
from .anchors import AnchorSet
from .geometry import Aabb, TriMesh
from .metrics import sample_mesh_surface

CLASSIFY_RETRIES = 8
PARITY_RAYS = 3


class AnchorClass(enum.IntEnum):
    INTERIOR = 1
    EXTERIOR = 2


class Label(enum.IntEnum):
    UNKNOWN = 0
    INSIDE = 1
    OUTSIDE = 2


class Provenance(enum.IntEnum):
    NONE = 0
    COVERED_INTERIOR = 1
    COVERED_EXTERIOR = 2
    FLOOD = 3
    BOUNDARY = 4


def scene(mesh: TriMesh) -> BVH:
    """BVH for ``mesh``, built once and cached on the (immutable) mesh."""
    bvh = mesh.__dict__.get("_bvh")
    if bvh is None:
        bvh = BVH(mesh.corners)
        object.__setattr__(mesh, "_bvh", bvh)
    return bvh


def _require_watertight(mesh: TriMesh) -> None:
    if not mesh.watertight:
        raise ValueError("mesh must be declared watertight")


def _anchor_positions(anchors) -> np.ndarray:
    return anchors.positions if isinstance(anchors, AnchorSet) else as_points(anchors, name="anchors")


def _box_exit(origins: np.ndarray, dirs: np.ndarray, box: Aabb) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        t_hi = np.where(dirs > 0, (box.max - origins) / dirs, np.inf)
        t_lo = np.where(dirs < 0, (box.min - origins) / dirs, np.inf)
    return np.minimum(t_hi, t_lo).min(axis=1)


def radial_depths(mesh: TriMesh, anchor, directions, box: Aabb) -> np.ndarray:
    """Distance from ``anchor`` to the first surface hit per unit direction, box-clipped."""
    _require_watertight(mesh)
    a = as_vector(anchor, 3, "anchor")
    if not bool(box.contains(a)):
        raise ValueError(f"anchor {a} lies outside the box")
    d = np.atleast_2d(np.asarray(directions, dtype=float))
    hit = scene(mesh).first_hit(a, d)
    clip = _box_exit(np.broadcast_to(a, d.shape), d, box)
    return np.minimum(hit, clip)


def radial_depth(mesh: TriMesh, anchor, direction, box: Aabb) -> float:
    return float(radial_depths(mesh, anchor, np.atleast_2d(direction), box)[0])


def _random_dirs(rng: np.random.Generator, n: int) -> np.ndarray:
    d = rng.standard_normal((n, 3))
    return d / np.linalg.norm(d, axis=1, keepdims=True)


def classify_anchors(mesh: TriMesh, points, seed: int = 0) -> np.ndarray:
    """Ray-parity inside test per point; grazing rays are re-cast up to 8 times."""
    _require_watertight(mesh)
    P = as_points(points, name="points")
    bvh = scene(mesh)
    rng = np.random.Generator(np.random.PCG64(seed))
    out = np.zeros(len(P), dtype=np.int64)
    todo = np.arange(len(P))
    for _ in range(1 + CLASSIFY_RETRIES):
        if not len(todo):
            break
        n = count_hits_checked(bvh, P[todo], _random_dirs(rng, len(todo)))
        ok = n >= 0
        out[todo[ok]] = np.where(n[ok] % 2 == 1, AnchorClass.INTERIOR, AnchorClass.EXTERIOR)
        todo = todo[~ok]
    if len(todo):
        raise RuntimeError(f"ray parity ambiguous after {CLASSIFY_RETRIES} retries for points {P[todo]}")
    return out


def classify_anchor(mesh: TriMesh, anchor) -> AnchorClass:
    return AnchorClass(classify_anchors(mesh, np.atleast_2d(anchor))[0])


def parity_inside(mesh: TriMesh, X, seed: int = 0, n_rays: int = PARITY_RAYS) -> np.ndarray:
    """Majority vote of ray-parity membership over ``n_rays`` random directions."""
    X = as_points(X, name="queries")
    bvh = scene(mesh)
    rng = np.random.Generator(np.random.PCG64(seed))
    votes = np.zeros(len(X), dtype=np.int64)
    for d in _random_dirs(rng, n_rays):
        votes += bvh.count_hits(X, d) % 2
    return votes * 2 > n_rays


def covers(mesh: TriMesh, anchor, X, box: Aabb) -> np.ndarray:
    """True where ``|x - a|`` is smaller than the radial depth from ``a`` toward ``x``."""
    a = np.asarray(anchor, dtype=float)
    r = X - a
    rn = np.linalg.norm(r, axis=1)
    out = rn == 0.0
    rows = np.nonzero(~out)[0]
    if len(rows):
        d = r[rows] / rn[rows, None]
        blocked = scene(mesh).occluded(a, d, rn[rows])
        clip = _box_exit(np.broadcast_to(a, d.shape), d, box)
        out[rows] = ~blocked & (rn[rows] < clip)
    return out


def _check_classes(mesh, A, expected: AnchorClass) -> None:
    cls = classify_anchors(mesh, A)
    if np.any(cls != expected):
        bad = np.nonzero(cls != expected)[0]
        raise ValueError(f"anchors {bad.tolist()} are not {expected.name.lower()}")


def oracle_occupancy_interior(mesh: TriMesh, anchors, X, box: Aabb, check: bool = True) -> np.ndarray:
    """Inside iff some interior anchor covers the query."""
    _require_watertight(mesh)
    A = _anchor_positions(anchors)
    X = as_points(X, name="queries")
    if check:
        _check_classes(mesh, A, AnchorClass.INTERIOR)
    inside = np.zeros(len(X), dtype=bool)
    for a in A:
        rows = np.nonzero(~inside)[0]
        if not len(rows):
            break
        inside[rows[covers(mesh, a, X[rows], box)]] = True
    return inside


def oracle_occupancy_exterior(mesh: TriMesh, anchors, X, box: Aabb, check: bool = True) -> np.ndarray:
    """Inside iff no exterior anchor covers the query."""
    _require_watertight(mesh)
    A = _anchor_positions(anchors)
    X = as_points(X, name="queries")
    if check:
        _check_classes(mesh, A, AnchorClass.EXTERIOR)
    outside = np.zeros(len(X), dtype=bool)
    for a in A:
        rows = np.nonzero(~outside)[0]
        if not len(rows):
            break
        outside[rows[covers(mesh, a, X[rows], box)]] = True
    return ~outside


@dataclass(frozen=True)
class LabeledGrid:
    """Labels at the centers of ``resolution`` cells tiling ``box``."""

    box: Aabb
    resolution: tuple
    labels: np.ndarray
    provenance: np.ndarray

    @property
    def spacing(self) -> np.ndarray:
        return self.box.extent / np.array(self.resolution)

    @property
    def origin(self) -> np.ndarray:
        return self.box.min + 0.5 * self.spacing

    @property
    def inside(self) -> np.ndarray:
        return self.labels == Label.INSIDE

    def centers(self) -> np.ndarray:
        return cell_centers(self.box, self.resolution)

    def lookup(self, X) -> np.ndarray:
        """Inside flag of the cell containing each query."""
        X = np.asarray(X, dtype=float)
        ijk = np.floor((X - self.box.min) / self.spacing).astype(np.int64)
        ijk = np.clip(ijk, 0, np.array(self.resolution) - 1)
        return self.inside[ijk[:, 0], ijk[:, 1], ijk[:, 2]]


def cell_centers(box: Aabb, resolution) -> np.ndarray:
    res = np.array(resolution)
    h = box.extent / res
    axes = [box.min[i] + (np.arange(res[i]) + 0.5) * h[i] for i in range(3)]
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)


def _resolution(res) -> tuple:
    res = (res, res, res) if np.ndim(res) == 0 else tuple(res)
    res = tuple(check_count(r, "resolution", 2) for r in res)
    if len(res) != 3:
        raise ValueError("resolution must have three entries")
    return res


def default_box(mesh: TriMesh, anchors, margin: float = 0.05) -> Aabb:
    """Cube centered on the mesh/anchor bounds, padded by ``margin`` of its width."""
    A = _anchor_positions(anchors)
    b = Aabb.around(mesh.vertices, A)
    c = 0.5 * (b.min + b.max)
    half = 0.5 * b.extent.max() * (1.0 + 2.0 * margin)
    return Aabb(c - half, c + half)


def oracle_occupancy_mixed(mesh: TriMesh, anchors, resolution, box: Aabb | None = None,
                           classes=None) -> LabeledGrid:
    """Label every grid cell Inside/Outside from a possibly mixed anchor set.

    Covered cells take the class of a covering anchor. Each remaining
    6-connected component of unknown cells is Outside if it touches the grid
    boundary; otherwise it inherits from labeled neighbours: directly across a
    face whose center-to-center segment crosses the surface an even number of
    times, negated across an odd number. Contradictory evidence raises
    ``ValueError("coverage violated ...")``.
    """
    _require_watertight(mesh)
    A = _anchor_positions(anchors)
    res = _resolution(resolution)
    box = box or default_box(mesh, A)
    cls = classify_anchors(mesh, A) if classes is None else np.asarray(classes)
    X = cell_centers(box, res)
    labels = np.zeros(len(X), dtype=np.int8)
    prov = np.zeros(len(X), dtype=np.int8)
    for kind, label, tag in ((AnchorClass.INTERIOR, Label.INSIDE, Provenance.COVERED_INTERIOR),
                             (AnchorClass.EXTERIOR, Label.OUTSIDE, Provenance.COVERED_EXTERIOR)):
        for a in A[cls == kind]:
            rows = np.nonzero(labels == Label.UNKNOWN)[0]
            if not len(rows):
                break
            hit = rows[covers(mesh, a, X[rows], box)]
            labels[hit] = label
            prov[hit] = tag
    labels = labels.reshape(res)
    prov = prov.reshape(res)
    _resolve_unknown(mesh, box, res, labels, prov)
    return LabeledGrid(box, res, labels, prov)


_FACES = ((1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1))


def _resolve_unknown(mesh, box, res, labels, prov) -> None:
    unknown = labels == Label.UNKNOWN
    if not unknown.any():
        return
    comp, n_comp = ndimage.label(unknown)  # default structure is 6-connectivity in 3D
    boundary = np.zeros(n_comp + 1, dtype=bool)
    for ax in range(3):
        for side in (0, -1):
            boundary[np.unique(np.take(comp, side, axis=ax))] = True
    boundary[0] = False
    h = box.extent / np.array(res)
    # implied[c, crossing, label]: evidence counts per component
    implied = np.zeros((n_comp + 1, 2, 3), dtype=np.int64)
    bvh = scene(mesh)
    for step in _FACES:
        src = [slice(None)] * 3
        dst = [slice(None)] * 3
        for ax, s in enumerate(step):
            if s == 1:
                src[ax], dst[ax] = slice(0, -1), slice(1, None)
            elif s == -1:
                src[ax], dst[ax] = slice(1, None), slice(0, -1)
        c_src = comp[tuple(src)]
        l_dst = labels[tuple(dst)]
        pair = (c_src > 0) & (l_dst != Label.UNKNOWN)
        if not pair.any():
            continue
        idx = np.argwhere(pair)
        offset = np.array([0 if s >= 0 else 1 for s in step])
        cell = idx + offset
        origin = box.min + (cell + 0.5) * h
        d = np.array(step, dtype=float)
        length = float(np.abs(d) @ h)
        crossings = bvh.count_hits(origin, d, length)
        neighbour = l_dst[pair]
        odd = crossings % 2 == 1
        implied_label = np.where(odd, 3 - neighbour, neighbour)
        np.add.at(implied, (c_src[pair], (crossings > 0).astype(int), implied_label), 1)
    for c in range(1, n_comp + 1):
        direct = implied[c, 0]
        if direct[Label.INSIDE] and direct[Label.OUTSIDE]:
            raise ValueError(f"coverage violated: unknown region {c} touches both inside and outside cells")
        mask = comp == c
        if boundary[c]:
            if direct[Label.INSIDE]:
                raise ValueError(f"coverage violated: unknown region {c} links inside cells to the box boundary")
            labels[mask], prov[mask] = Label.OUTSIDE, Provenance.BOUNDARY
            continue
        if direct[Label.INSIDE] or direct[Label.OUTSIDE]:
            lab = Label.INSIDE if direct[Label.INSIDE] else Label.OUTSIDE
        else:
            across = implied[c, 1]
            if across[Label.INSIDE] and across[Label.OUTSIDE]:
                raise ValueError(f"coverage violated: contradictory evidence across the surface for region {c}")
            if not (across[Label.INSIDE] or across[Label.OUTSIDE]):
                raise ValueError(f"coverage violated: region {c} has no labeled neighbour")
            lab = Label.INSIDE if across[Label.INSIDE] else Label.OUTSIDE
        labels[mask], prov[mask] = lab, Provenance.FLOOD


def coverage_check(mesh: TriMesh, anchors, n_samples: int, seed: int) -> float:
    """Fraction of area-uniform surface samples seen by at least one anchor."""
    _require_watertight(mesh)
    A = _anchor_positions(anchors)
    S = sample_mesh_surface(mesh, n_samples, seed).points
    bvh = scene(mesh)
    seen = np.zeros(len(S), dtype=bool)
    for a in A:
        rows = np.nonzero(~seen)[0]
        if not len(rows):
            break
        r = S[rows] - a
        L = np.linalg.norm(r, axis=1)
        ok = L > 0
        d = r[ok] / L[ok, None]
        # the sample's own triangle sits at t = L; stop just short of it
        blocked = bvh.occluded(a, d, L[ok] * (1.0 - 1e-7))
        seen[rows[ok][~blocked]] = True
    return float(seen.mean())
