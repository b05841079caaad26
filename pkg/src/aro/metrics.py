"""Reconstruction metrics: Chamfer, Hausdorff, EMD and occupancy IoU.

Chamfer distance here is the symmetric mean of *unsquared* Euclidean
nearest-neighbour distances; numbers are comparable only to other numbers
produced by this module.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial import cKDTree

from ._validation import as_points, check_count
from .geometry import Aabb, PointCloud, TriMesh

EMD_MAX_POINTS = 512


def _pts(X) -> np.ndarray:
    return X.points if isinstance(X, PointCloud) else as_points(X)


def _nn_dist(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    return cKDTree(dst).query(src, k=1)[0]


def chamfer(X, Y) -> float:
    """``0.5 * (mean_x min_y |x-y| + mean_y min_x |x-y|)``."""
    a, b = _pts(X), _pts(Y)
    return float(0.5 * (_nn_dist(a, b).mean() + _nn_dist(b, a).mean()))


def hausdorff(X, Y) -> float:
    a, b = _pts(X), _pts(Y)
    return float(max(_nn_dist(a, b).max(), _nn_dist(b, a).max()))


def emd(X, Y) -> float:
    """Mean edge length of the minimum-cost perfect matching (exact assignment)."""
    a, b = _pts(X), _pts(Y)
    if len(a) != len(b):
        raise ValueError(f"emd needs equal-size point sets, got {len(a)} and {len(b)}")
    if len(a) > EMD_MAX_POINTS:
        raise ValueError(f"emd supports at most {EMD_MAX_POINTS} points; subsample first")
    cost = np.linalg.norm(a[:, None, :] - b[None, :, :], axis=-1)
    rows, cols = linear_sum_assignment(cost)
    # exactly rounded sum keeps emd(X, Y) == emd(Y, X) bit for bit
    return math.fsum(cost[rows, cols]) / len(a)


def subsample(X, n: int, seed: int) -> np.ndarray:
    """Seeded subset of ``n`` points without replacement (all points if fewer)."""
    pts = _pts(X)
    if len(pts) <= n:
        return pts
    rng = np.random.Generator(np.random.PCG64(seed))
    return pts[np.sort(rng.choice(len(pts), size=n, replace=False))]


def occupancy_iou(occ_a, occ_b, domain: Aabb, n: int, seed: int) -> float:
    """Monte-Carlo IoU of two inside-indicators over ``n`` uniform samples of ``domain``.

    ``occ_a``/``occ_b`` map an ``(n, d)`` array to booleans. ``0/0`` counts as 1.
    """
    n = check_count(n, "n")
    rng = np.random.Generator(np.random.PCG64(seed))
    X = domain.min + rng.random((n, domain.min.size)) * domain.extent
    a = np.asarray(occ_a(X), dtype=bool)
    b = np.asarray(occ_b(X), dtype=bool)
    union = np.count_nonzero(a | b)
    return 1.0 if union == 0 else np.count_nonzero(a & b) / union


def grid_iou(values_a, values_b, iso: float = 0.5) -> float:
    """IoU between two equally laid-out occupancy grids, thresholded at ``iso``."""
    a = np.asarray(values_a) >= iso
    b = np.asarray(values_b) >= iso
    if a.shape != b.shape:
        raise ValueError(f"grid layouts differ: {a.shape} vs {b.shape}")
    union = np.count_nonzero(a | b)
    return 1.0 if union == 0 else np.count_nonzero(a & b) / union


def sample_mesh_surface(mesh: TriMesh, n: int, seed: int) -> PointCloud:
    """Area-weighted uniform samples on the triangles of ``mesh``."""
    n = check_count(n, "n")
    if len(mesh.triangles) == 0:
        raise ValueError("cannot sample an empty mesh")
    areas = mesh.areas()
    total = areas.sum()
    if not total > 0:
        raise ValueError("mesh has zero total area")
    rng = np.random.Generator(np.random.PCG64(seed))
    tri = rng.choice(len(areas), size=n, p=areas / total)
    r1 = np.sqrt(rng.random(n))
    r2 = rng.random(n)
    c = mesh.corners[tri]
    pts = (1 - r1)[:, None] * c[:, 0] + (r1 * (1 - r2))[:, None] * c[:, 1] + (r1 * r2)[:, None] * c[:, 2]
    return PointCloud(pts)


@dataclass
class MetricReport:
    cd: float
    hd: float
    emd: float
    iou: float
    n_surface_samples: int
    n_emd_samples: int
    n_iou_samples: int
    seed: int
    conventions: dict = field(default_factory=lambda: {
        "cd": "symmetric mean of unsquared nearest-neighbour distances",
        "hd": "symmetric max of nearest-neighbour distances",
        "emd": f"mean matched distance, exact assignment on <= {EMD_MAX_POINTS} seeded subsamples",
        "iou": "Monte-Carlo over the joint bounding box",
    })

    def to_dict(self) -> dict:
        return asdict(self)


def evaluate_meshes(recon: TriMesh, gt: TriMesh, n_samples: int, seed: int,
                    recon_inside=None, gt_inside=None, n_iou: int = 100_000) -> MetricReport:
    """Surface metrics between two meshes plus IoU of their inside-indicators.

    ``recon_inside``/``gt_inside`` default to ray-parity membership in each mesh.
    """
    from .visibility import parity_inside

    a = sample_mesh_surface(recon, n_samples, seed).points
    b = sample_mesh_surface(gt, n_samples, seed + 1).points
    ea, eb = subsample(a, EMD_MAX_POINTS, seed + 2), subsample(b, EMD_MAX_POINTS, seed + 3)
    recon_inside = recon_inside or (lambda X: parity_inside(recon, X, seed=seed))
    gt_inside = gt_inside or (lambda X: parity_inside(gt, X, seed=seed))
    box = Aabb.around(recon.vertices, gt.vertices)
    iou = occupancy_iou(recon_inside, gt_inside, box, n_iou, seed + 4)
    return MetricReport(chamfer(a, b), hausdorff(a, b), emd(ea, eb), iou, n_samples, len(ea), n_iou, seed)
