"""Occupancy grids: sampling, isosurface extraction and file formats."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from skimage import measure

from ._validation import check_count
from .geometry import Aabb, TriMesh, is_edge_manifold

ISO = 0.5
GRID_MAGIC = "ARO-GRID v1"
MIN_TRIANGLE_AREA = 1e-12


@dataclass(frozen=True)
class OccupancyGrid:
    """Values of ``occ`` on the lattice ``origin + spacing * (i, j, k)``."""

    origin: np.ndarray
    spacing: float
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim not in (2, 3) or min(v.shape) < 2:
            raise ValueError(f"grid needs >= 2 samples per axis, got shape {v.shape}")
        if not (np.all(v >= 0.0) and np.all(v <= 1.0)):
            raise ValueError("occupancy values must lie in [0, 1]")
        if not self.spacing > 0:
            raise ValueError("spacing must be positive")
        v.setflags(write=False)
        o = np.asarray(self.origin, dtype=np.float64).ravel()
        if o.size != v.ndim:
            raise ValueError("origin dimension does not match the grid")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "origin", o)
        object.__setattr__(self, "spacing", float(self.spacing))

    @property
    def resolution(self) -> tuple:
        return self.values.shape

    def points(self) -> np.ndarray:
        return lattice(self.origin, self.spacing, self.resolution)

    @property
    def bounds(self) -> Aabb:
        return Aabb(self.origin, self.origin + self.spacing * (np.array(self.resolution) - 1))

    def sample_nearest(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        ijk = np.rint((X - self.origin) / self.spacing).astype(np.int64)
        ijk = np.clip(ijk, 0, np.array(self.resolution) - 1)
        return self.values[tuple(ijk.T)]


def lattice(origin, spacing: float, resolution) -> np.ndarray:
    axes = [origin[i] + spacing * np.arange(n) for i, n in enumerate(resolution)]
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(resolution))


def _grid_layout(domain: Aabb, resolution):
    dim = domain.min.size
    res = (resolution,) * dim if np.ndim(resolution) == 0 else tuple(resolution)
    if len(res) != dim:
        raise ValueError(f"resolution needs {dim} entries")
    res = tuple(check_count(n, "resolution", 2) for n in res)
    h = domain.extent / (np.array(res) - 1)
    if not np.allclose(h, h[0], rtol=1e-9, atol=0.0):
        raise ValueError(f"domain and resolution give unequal spacings {h}; grids are isotropic")
    return res, float(h[0])


def evaluate_grid(occ_fn, domain: Aabb, resolution, workers: int = 1, chunk: int = 65536) -> OccupancyGrid:
    """Sample a vectorized ``occ_fn`` (``(n, d) -> (n,)`` in [0, 1]) on corner lattice points.

    ``workers > 1`` evaluates chunks on a thread pool; results are written to
    fixed slots, so the grid does not depend on ``workers``.
    """
    res, h = _grid_layout(domain, resolution)
    X = lattice(domain.min, h, res)
    out = np.empty(len(X))
    bounds = [(s, min(s + chunk, len(X))) for s in range(0, len(X), chunk)]

    def run(span):
        s, e = span
        v = np.asarray(occ_fn(X[s:e]), dtype=np.float64).reshape(-1)
        if v.shape[0] != e - s:
            raise ValueError("occupancy function returned the wrong number of values")
        bad = ~((v >= 0.0) & (v <= 1.0))
        if bad.any():
            i = s + int(np.argmax(bad))
            raise ValueError(f"occupancy {v[i - s]!r} outside [0, 1] at {X[i].tolist()}")
        out[s:e] = v

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(run, bounds))
    else:
        for span in bounds:
            run(span)
    return OccupancyGrid(domain.min.copy(), h, out.reshape(res))


def empty_mesh() -> TriMesh:
    return TriMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))


def marching_cubes(grid: OccupancyGrid, iso: float = ISO) -> TriMesh:
    """Classic-table marching cubes with linear edge interpolation.

    Triangles with area below 1e-12 are dropped. The ``watertight`` flag is set
    from an edge-manifold check of the result.
    """
    v = grid.values
    if v.ndim != 3:
        raise ValueError("marching_cubes needs a 3D grid")
    if not (v.min() < iso < v.max()):
        return empty_mesh()
    verts, faces, _, _ = measure.marching_cubes(v, level=iso, spacing=(grid.spacing,) * 3,
                                                method="lorensen", allow_degenerate=False)
    verts = verts.astype(np.float64) + grid.origin
    c = verts[faces]
    area = 0.5 * np.linalg.norm(np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0]), axis=1)
    faces = faces[area > MIN_TRIANGLE_AREA]
    if len(faces) == 0:
        return empty_mesh()
    used, inverse = np.unique(faces, return_inverse=True)
    faces = inverse.reshape(-1, 3)
    return TriMesh(verts[used], faces, watertight=is_edge_manifold(faces))


@dataclass(frozen=True)
class Polyline:
    points: np.ndarray
    closed: bool

    def length(self) -> float:
        return float(np.linalg.norm(np.diff(self.points, axis=0), axis=1).sum())


def marching_squares(grid: OccupancyGrid, iso: float = ISO) -> list:
    """Iso-contours of a 2D grid as polylines in world coordinates.

    A closed loop repeats its first point at the end.
    """
    v = grid.values
    if v.ndim != 2:
        raise ValueError("marching_squares needs a 2D grid")
    if not (v.min() < iso < v.max()):
        return []
    out = []
    for c in measure.find_contours(v, level=iso):
        pts = grid.origin + grid.spacing * c
        closed = bool(len(c) > 2 and np.array_equal(c[0], c[-1]))
        out.append(Polyline(pts, closed))
    return out


# ---------------------------------------------------------------------------
# file formats


def write_grid(path, grid: OccupancyGrid) -> None:
    """ASCII header then the values as little-endian float32 in C order."""
    if grid.values.ndim != 3:
        raise ValueError("grid files hold 3D grids")
    nx, ny, nz = grid.resolution
    o = grid.origin
    header = (f"{GRID_MAGIC}\n{nx} {ny} {nz}\n{o[0]:.17g} {o[1]:.17g} {o[2]:.17g}\n"
              f"{grid.spacing:.17g}\n")
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(np.ascontiguousarray(grid.values, dtype="<f4").tobytes())


def read_grid(path) -> OccupancyGrid:
    with open(path, "rb") as fh:
        if fh.readline().decode("ascii").strip() != GRID_MAGIC:
            raise ValueError(f"{path}: not an {GRID_MAGIC} file")
        res = tuple(int(x) for x in fh.readline().split())
        origin = np.array([float(x) for x in fh.readline().split()])
        spacing = float(fh.readline())
        data = np.frombuffer(fh.read(), dtype="<f4")
    if data.size != int(np.prod(res)):
        raise ValueError(f"{path}: expected {np.prod(res)} values, found {data.size}")
    return OccupancyGrid(origin, spacing, data.astype(np.float64).reshape(res))


def write_pgm(path, image) -> None:
    """Plain PGM (P2), 8-bit, pixel = round(255 * occ).

    ``image[i, j]`` is column ``i`` (x) and row ``j`` (y); rows are written
    top (largest y) first.
    """
    img = np.asarray(image.values if isinstance(image, OccupancyGrid) else image, dtype=float)
    if img.ndim != 2:
        raise ValueError("PGM images are 2D")
    px = np.rint(255.0 * np.clip(img, 0.0, 1.0)).astype(int).T[::-1]
    h, w = px.shape
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(f"P2\n{w} {h}\n255\n")
        for row in px:
            fh.write(" ".join(str(p) for p in row) + "\n")


def read_pgm(path) -> np.ndarray:
    """Inverse of ``write_pgm``; returns values in [0, 1] indexed ``[x, y]``."""
    with open(path, "r", encoding="ascii") as fh:
        tokens = [t for line in fh for t in line.split("#")[0].split()]
    if tokens[0] != "P2":
        raise ValueError(f"{path}: not a plain PGM")
    w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    px = np.array(tokens[4:4 + w * h], dtype=float).reshape(h, w)
    return (px[::-1].T / maxval)
