"""Occupancy from anchored radial observations.

Point-cloud and mesh geometry, anchor placement, exact cone queries, the
visibility oracles, a depth-based occupancy heuristic, iso-surfacing,
reconstruction metrics and a small 2D attention network.
"""

from .anchors import (AnchorSet, Strategy, fibonacci_sphere_directions, grid_sample,
                      layered_fibonacci, make_anchors, read_anchors, ring_anchors_2d,
                      uniform_ball, write_anchors)
from .estimators import AroEncoder, AroNet2D, HeuristicOccupancy, VisibilityOracle
from .field import (OccupancyGrid, evaluate_grid, marching_cubes, marching_squares,
                    read_grid, read_pgm, write_grid, write_pgm)
from .geometry import (Aabb, Normalization, PointCloud, Ray, TriMesh, normalize_to_unit_sphere,
                       ray_aabb_exit, ray_triangle_intersect)
from .metrics import chamfer, emd, evaluate_meshes, hausdorff, occupancy_iou
from .observation import (AroFeatureSet, RadialObservation, estimate_radial_depth, extract_aro,
                          extract_aro_batch, heuristic_occupancy_batch, heuristic_occupancy_exterior)
from .spatial import ConeQuery, SpatialIndex, build_index, cone_top_k
from .visibility import (coverage_check, oracle_occupancy_exterior, oracle_occupancy_interior,
                         oracle_occupancy_mixed, parity_inside)

__version__ = "0.1.0"
