"""2D shapes, hit distances and per-anchor features for the 2D network."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .._validation import as_points
from ..geometry import HIT_EPS, Aabb

DEFAULT_BOX = Aabb.cube(0.5, dim=2)


def _signed_area(v: np.ndarray) -> float:
    x, y = v[:, 0], v[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def _segments_cross(p, q, r, s) -> bool:
    def orient(a, b, c):
        return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])

    d1, d2 = orient(r, s, p), orient(r, s, q)
    d3, d4 = orient(p, q, r), orient(p, q, s)
    if ((d1 > 0) != (d2 > 0)) and ((d3 > 0) != (d4 > 0)) and d1 * d2 != 0 and d3 * d4 != 0:
        return True

    def on(a, b, c, o):
        return o == 0 and min(a[0], b[0]) <= c[0] <= max(a[0], b[0]) and min(a[1], b[1]) <= c[1] <= max(a[1], b[1])

    return on(r, s, p, d1) or on(r, s, q, d2) or on(p, q, r, d3) or on(p, q, s, d4)


@dataclass(frozen=True)
class Shape2D:
    """Closed simple polygon, stored counterclockwise; the loop closes implicitly."""

    vertices: np.ndarray

    def __post_init__(self):
        v = as_points(self.vertices, dim=2, name="vertices")
        if len(v) >= 2 and np.array_equal(v[0], v[-1]):
            v = v[:-1]
        if len(v) < 3:
            raise ValueError("polygon needs at least three vertices")
        if np.any(np.abs(v) > 0.5 + 1e-12):
            raise ValueError("polygon must lie in [-0.5, 0.5]^2")
        area = _signed_area(v)
        if area == 0.0:
            raise ValueError("polygon has zero area")
        if area < 0:
            v = v[::-1].copy()
        n = len(v)
        for i in range(n):
            for j in range(i + 1, n):
                if j == i + 1 or (i == 0 and j == n - 1):
                    continue
                if _segments_cross(v[i], v[(i + 1) % n], v[j], v[(j + 1) % n]):
                    raise ValueError(f"polygon is not simple: edges {i} and {j} intersect")
        v.setflags(write=False)
        object.__setattr__(self, "vertices", v)

    @property
    def edges(self):
        """Edge start points and edge vectors."""
        a = self.vertices
        return a, np.roll(a, -1, axis=0) - a

    def contains(self, X) -> np.ndarray:
        """Even-odd point-in-polygon test."""
        X = np.asarray(X, dtype=float)
        a = self.vertices
        b = np.roll(a, -1, axis=0)
        x, y = X[:, 0:1], X[:, 1:2]
        straddle = (a[:, 1] > y) != (b[:, 1] > y)
        with np.errstate(divide="ignore", invalid="ignore"):
            xc = a[:, 0] + (y - a[:, 1]) * (b[:, 0] - a[:, 0]) / (b[:, 1] - a[:, 1])
        return (np.count_nonzero(straddle & (x < xc), axis=1) % 2) == 1

    def perimeter(self) -> float:
        _, e = self.edges
        return float(np.linalg.norm(e, axis=1).sum())


def disk(radius: float = 0.3, n: int = 256, center=(0.0, 0.0)) -> Shape2D:
    t = 2 * np.pi * np.arange(n) / n
    return Shape2D(np.stack([center[0] + radius * np.cos(t), center[1] + radius * np.sin(t)], axis=1))


def letter_g() -> Shape2D:
    """Blocky capital G."""
    return Shape2D(np.array([
        (-0.35, 0.35), (0.35, 0.35), (0.35, 0.20), (-0.20, 0.20), (-0.20, -0.20),
        (0.20, -0.20), (0.20, -0.05), (0.05, -0.05), (0.05, 0.08), (0.35, 0.08),
        (0.35, -0.35), (-0.35, -0.35),
    ]))


def read_shape(path) -> Shape2D:
    rows = []
    with open(path, "r", encoding="ascii") as fh:
        for line in fh:
            parts = line.split()
            if parts and not parts[0].startswith("#"):
                rows.append([float(parts[0]), float(parts[1])])
    return Shape2D(np.array(rows))


def write_shape(path, shape: Shape2D) -> None:
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        for x, y in shape.vertices:
            fh.write(f"{x:.17g} {y:.17g}\n")


def _box_exit_2d(origins, dirs, box: Aabb) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        t_hi = np.where(dirs > 0, (box.max - origins) / dirs, np.inf)
        t_lo = np.where(dirs < 0, (box.min - origins) / dirs, np.inf)
    return np.minimum(t_hi, t_lo).min(axis=-1)


def hit_distances(shape: Shape2D, anchors, X, box: Aabb = DEFAULT_BOX, chunk: int = 4096) -> np.ndarray:
    """Hit distance per (query, anchor): first boundary crossing along ``a -> x``.

    Rays that miss the boundary are clipped at the box. Returns ``(n, m)``.
    """
    A = np.asarray(anchors, dtype=float).reshape(-1, 2)
    X = np.asarray(X, dtype=float).reshape(-1, 2)
    if np.any(~box.contains(A)):
        raise ValueError("anchors must lie inside the box")
    p, e = shape.edges
    out = np.empty((len(X), len(A)))
    for s in range(0, len(X), chunk):
        r = X[s:s + chunk, None, :] - A[None, :, :]
        n = np.sqrt(r[..., 0] ** 2 + r[..., 1] ** 2)
        if np.any(n == 0.0):
            raise ValueError("query coincides with an anchor; the ray direction is undefined")
        d = r / n[..., None]
        # a + t d = p + s e  (per edge)
        w = p[None, None, :, :] - A[None, :, None, :]
        dx, dy = d[..., 0][..., None], d[..., 1][..., None]
        den = dx * e[:, 1] - dy * e[:, 0]
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (w[..., 0] * e[:, 1] - w[..., 1] * e[:, 0]) / den
            u = (w[..., 0] * dy - w[..., 1] * dx) / den
        ok = (den != 0.0) & (u >= 0.0) & (u <= 1.0) & (t > HIT_EPS)
        t = np.where(ok, t, np.inf).min(axis=-1)
        clip = _box_exit_2d(np.broadcast_to(A[None], d.shape), d, box)
        out[s:s + chunk] = np.minimum(t, clip)
    return out


def hit_distance_2d(shape: Shape2D, anchor, x, box: Aabb = DEFAULT_BOX) -> float:
    return float(hit_distances(shape, np.atleast_2d(anchor), np.atleast_2d(x), box)[0, 0])


def features_2d(shape: Shape2D, anchors, X, box: Aabb = DEFAULT_BOX) -> np.ndarray:
    """Per-anchor features ``(r_x, r_y, |r|, d)``, shape ``(n, m, 4)``."""
    A = np.asarray(anchors, dtype=float).reshape(-1, 2)
    X = np.asarray(X, dtype=float).reshape(-1, 2)
    r = X[:, None, :] - A[None, :, :]
    rn = np.sqrt(r[..., 0] ** 2 + r[..., 1] ** 2)
    d = hit_distances(shape, A, X, box)
    return np.concatenate([r, rn[..., None], d[..., None]], axis=-1)


def sample_training_set(shape: Shape2D, n: int, rng: np.random.Generator, sigma: float = 0.03,
                        box: Aabb = DEFAULT_BOX):
    """Half uniform in the box, half in a Gaussian band around the boundary; exact labels."""
    n_band = n // 2
    uni = box.min + rng.random((n - n_band, 2)) * box.extent
    p, e = shape.edges
    lengths = np.linalg.norm(e, axis=1)
    edge = rng.choice(len(p), size=n_band, p=lengths / lengths.sum())
    on = p[edge] + rng.random(n_band)[:, None] * e[edge]
    band = np.clip(on + sigma * rng.standard_normal((n_band, 2)), box.min, box.max)
    X = np.vstack([uni, band])
    return X, shape.contains(X).astype(np.float64)


def disk_visible_region(center, radius: float, anchor, X) -> np.ndarray:
    """Points outside the disk whose segment to ``anchor`` does not enter it."""
    c = np.asarray(center, float)
    a = np.asarray(anchor, float)
    X = np.asarray(X, float)
    ab = X - a
    L2 = np.einsum("ij,ij->i", ab, ab)
    with np.errstate(invalid="ignore", divide="ignore"):
        t = np.clip(np.einsum("ij,j->i", ab, c - a) / L2, 0.0, 1.0)
    closest = a + t[:, None] * ab
    clear = np.linalg.norm(closest - c, axis=1) >= radius
    return clear & (np.linalg.norm(X - c, axis=1) >= radius)
