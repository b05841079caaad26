"""Core geometric types, normalization and exact ray predicates."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ._validation import as_points, as_vector

# Hits closer than this to the ray origin are treated as self-intersections.
HIT_EPS = 1e-9
SHAPE_RADIUS = 0.5


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Ray:
    origin: np.ndarray
    direction: np.ndarray

    def __post_init__(self):
        o = as_vector(self.origin, 3, "origin")
        d = as_vector(self.direction, 3, "direction")
        n = float(np.linalg.norm(d))
        if abs(n - 1.0) > 1e-9:
            raise ValueError(f"ray direction must be unit length, got norm {n!r}")
        object.__setattr__(self, "origin", _frozen(o))
        object.__setattr__(self, "direction", _frozen(d))

    @classmethod
    def towards(cls, origin, direction) -> "Ray":
        d = np.asarray(direction, dtype=float)
        return cls(origin, d / np.linalg.norm(d))

    def at(self, t: float) -> np.ndarray:
        return self.origin + t * self.direction


@dataclass(frozen=True)
class Aabb:
    min: np.ndarray
    max: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.min, dtype=float).ravel()
        hi = np.asarray(self.max, dtype=float).ravel()
        if lo.shape != hi.shape or lo.size not in (2, 3):
            raise ValueError("Aabb corners must be 2D or 3D vectors of equal size")
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise ValueError("Aabb corners must be finite")
        if np.any(lo > hi):
            raise ValueError(f"Aabb min {lo} exceeds max {hi}")
        object.__setattr__(self, "min", _frozen(lo))
        object.__setattr__(self, "max", _frozen(hi))

    @classmethod
    def cube(cls, half_width: float, dim: int = 3) -> "Aabb":
        return cls(np.full(dim, -half_width), np.full(dim, half_width))

    @classmethod
    def around(cls, *point_sets, margin: float = 0.0) -> "Aabb":
        """Smallest box containing every given point set, grown by ``margin``."""
        pts = np.vstack([np.atleast_2d(np.asarray(p, dtype=float)) for p in point_sets])
        return cls(pts.min(axis=0) - margin, pts.max(axis=0) + margin)

    @property
    def extent(self) -> np.ndarray:
        return self.max - self.min

    @property
    def diagonal(self) -> float:
        return float(np.linalg.norm(self.extent))

    def contains(self, points, tol: float = 0.0) -> np.ndarray:
        p = np.asarray(points, dtype=float)
        return np.all((p >= self.min - tol) & (p <= self.max + tol), axis=-1)


@dataclass(frozen=True)
class Normalization:
    """Transform ``p -> (p - offset) * scale`` applied by normalization."""

    scale: float
    offset: np.ndarray

    def apply(self, points) -> np.ndarray:
        return (np.asarray(points, dtype=float) - self.offset) * self.scale

    def invert(self, points) -> np.ndarray:
        return np.asarray(points, dtype=float) / self.scale + self.offset


@dataclass(frozen=True)
class PointCloud:
    points: np.ndarray
    normalization: Optional[Normalization] = None

    def __post_init__(self):
        pts = as_points(self.points, name="points")
        if len(pts) == 0:
            raise ValueError("point cloud must be nonempty")
        object.__setattr__(self, "points", _frozen(pts))

    def __len__(self) -> int:
        return len(self.points)


@dataclass(frozen=True)
class TriMesh:
    vertices: np.ndarray
    triangles: np.ndarray
    watertight: bool = False
    _edges_checked: bool = field(default=False, repr=False, compare=False)

    def __post_init__(self):
        v = as_points(self.vertices, name="vertices", allow_empty=True)
        t = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if t.size and (t.min() < 0 or t.max() >= len(v)):
            raise ValueError("triangle index out of range")
        object.__setattr__(self, "vertices", _frozen(v))
        object.__setattr__(self, "triangles", _frozen(t))
        if self.watertight and not is_edge_manifold(t):
            raise ValueError("mesh declared watertight but some edge is not shared by exactly two triangles")

    @property
    def corners(self) -> np.ndarray:
        """Triangle corner coordinates, shape (n_tri, 3, 3)."""
        return self.vertices[self.triangles]

    def areas(self) -> np.ndarray:
        c = self.corners
        return 0.5 * np.linalg.norm(np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0]), axis=1)

    @property
    def bounds(self) -> Aabb:
        return Aabb(self.vertices.min(axis=0), self.vertices.max(axis=0))

    def transformed(self, scale: float = 1.0, offset=(0.0, 0.0, 0.0)) -> "TriMesh":
        return TriMesh(self.vertices * scale + np.asarray(offset, float), self.triangles, self.watertight)


def is_edge_manifold(triangles: np.ndarray) -> bool:
    """True when every undirected edge is used by exactly two triangles."""
    t = np.asarray(triangles, dtype=np.int64).reshape(-1, 3)
    if len(t) == 0:
        return False
    e = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
    e.sort(axis=1)
    _, counts = np.unique(e, axis=0, return_counts=True)
    return bool(np.all(counts == 2))


def normalize_to_unit_sphere(cloud: PointCloud) -> PointCloud:
    """Center the cloud on its centroid and scale the farthest point to radius 0.5.

    The applied transform is stored on the result so meshes and queries can be
    mapped into the same frame with ``result.normalization.apply``.
    """
    pts = cloud.points
    offset = pts.mean(axis=0)
    centered = pts - offset
    radius = float(np.sqrt((centered * centered).sum(axis=1)).max())
    if radius == 0.0 or not np.isfinite(radius):
        raise ValueError("degenerate point cloud: all points identical")
    scale = SHAPE_RADIUS / radius
    out = centered * scale
    # snap the farthest point onto the sphere exactly
    far = int(np.argmax((out * out).sum(axis=1)))
    out[far] *= SHAPE_RADIUS / np.linalg.norm(out[far])
    norm = Normalization(scale, _frozen(offset))
    if cloud.normalization is not None:
        prev = cloud.normalization
        norm = Normalization(prev.scale * scale, _frozen(prev.offset + offset / prev.scale))
    return PointCloud(out, norm)


def ray_triangle_intersect(ray: Ray, tri) -> Optional[float]:
    """Möller–Trumbore test, edges inclusive.

    Returns the hit distance ``t`` or ``None`` for a miss, a degenerate
    triangle, or a hit within ``HIT_EPS`` of the origin.
    """
    v = np.asarray(tri, dtype=float).reshape(3, 3)
    e1 = v[1] - v[0]
    e2 = v[2] - v[0]
    p = np.cross(ray.direction, e2)
    det = float(e1 @ p)
    scale = np.linalg.norm(e1) * np.linalg.norm(e2)
    if scale == 0.0 or abs(det) <= 1e-14 * scale:
        return None
    inv = 1.0 / det
    s = ray.origin - v[0]
    u = float(s @ p) * inv
    if u < 0.0 or u > 1.0:
        return None
    q = np.cross(s, e1)
    w = float(ray.direction @ q) * inv
    if w < 0.0 or u + w > 1.0:
        return None
    t = float(e2 @ q) * inv
    if t < HIT_EPS:
        return None
    return t


def ray_aabb_exit(ray: Ray, box: Aabb) -> float:
    """Parameter at which a ray starting inside ``box`` leaves it."""
    o, d = ray.origin[: box.min.size], ray.direction[: box.min.size]
    if not bool(box.contains(o)):
        raise ValueError(f"ray origin {o} lies outside the box")
    return _slab_exit(o, d, box.min, box.max)


def _slab_exit(o, d, lo, hi) -> float:
    t = np.inf
    for ax in range(len(o)):
        if d[ax] > 0.0:
            t = min(t, (hi[ax] - o[ax]) / d[ax])
        elif d[ax] < 0.0:
            t = min(t, (lo[ax] - o[ax]) / d[ax])
    return float(t)
