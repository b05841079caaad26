"""Query-specific anchored radial observations and the point-cloud occupancy heuristic."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ._validation import as_points, check_count, check_half_angle
from .anchors import AnchorSet
from .spatial import DEFAULT_HALF_ANGLE, DEFAULT_K, SpatialIndex


@dataclass(frozen=True)
class RadialObservation:
    """One anchor's view of a query.

    ``observed`` holds anchor-relative offsets ``p - a``; ``valid`` is True for
    in-cone entries and False for fallback padding (or for empty slots when the
    cloud has fewer than ``k`` points).
    """

    anchor_id: int
    observed: np.ndarray
    valid: np.ndarray
    r: np.ndarray
    r_norm: float
    zero_axis: bool = False


@dataclass(frozen=True)
class AroFeatureSet:
    query: np.ndarray
    observations: tuple

    def __len__(self) -> int:
        return len(self.observations)


@dataclass(frozen=True)
class AroBatch:
    """Dense ARO features for many queries: ``observed`` is ``(q, m, k, 3)``."""

    queries: np.ndarray
    observed: np.ndarray
    valid: np.ndarray
    filled: np.ndarray
    r: np.ndarray
    r_norm: np.ndarray

    @property
    def shape(self):
        return self.observed.shape[:3]

    def feature_set(self, i: int) -> AroFeatureSet:
        obs = []
        for a in range(self.observed.shape[1]):
            obs.append(RadialObservation(a, self.observed[i, a], self.valid[i, a], self.r[i, a],
                                         float(self.r_norm[i, a]), bool(self.r_norm[i, a] == 0.0)))
        return AroFeatureSet(self.queries[i], tuple(obs))


def _positions(anchors) -> np.ndarray:
    """Anchor coordinates from an ``AnchorSet`` or a plain ``(m, 3)`` array."""
    if isinstance(anchors, AnchorSet):
        return anchors.positions
    return as_points(anchors, name="anchors")


def _norms(v: np.ndarray) -> np.ndarray:
    return np.sqrt(v[..., 0] * v[..., 0] + v[..., 1] * v[..., 1] + v[..., 2] * v[..., 2])


def extract_aro_batch(index: SpatialIndex, anchors: AnchorSet, X,
                      half_angle: float = DEFAULT_HALF_ANGLE, k: int = DEFAULT_K) -> AroBatch:
    X = as_points(X, name="queries")
    k = check_count(k, "k")
    half_angle = check_half_angle(half_angle)
    A = _positions(anchors)
    q, m = len(X), len(A)
    observed = np.zeros((q, m, k, 3))
    valid = np.zeros((q, m, k), dtype=bool)
    filled = np.zeros((q, m, k), dtype=bool)
    r = X[:, None, :] - A[None, :, :]
    r_norm = _norms(r)
    P = index.points
    for a in range(m):
        apex = A[a]
        ok = r_norm[:, a] > 0.0
        rows = np.nonzero(ok)[0]
        if len(rows):
            u = r[rows, a] / r_norm[rows, a, None]
            idx, n_in = index.view(apex, half_angle).top_k(u, k)
            kk = idx.shape[1]
            observed[rows, a, :kk] = P[idx] - apex
            valid[rows, a, :kk] = np.arange(kk)[None, :] < n_in[:, None]
            filled[rows, a, :kk] = True
        for row in np.nonzero(~ok)[0]:
            # query on the anchor: no axis, plain k-nearest by (distance, index)
            d = _norms(P - apex)
            order = np.lexsort((np.arange(len(P)), d))[:k]
            observed[row, a, : len(order)] = P[order] - apex
            valid[row, a, : len(order)] = True
            filled[row, a, : len(order)] = True
    return AroBatch(X, observed, valid, filled, r, r_norm)


def extract_aro(index: SpatialIndex, anchors: AnchorSet, x,
                half_angle: float = DEFAULT_HALF_ANGLE, k: int = DEFAULT_K) -> AroFeatureSet:
    return extract_aro_batch(index, anchors, np.atleast_2d(x), half_angle, k).feature_set(0)


# narrower cone than the encoder default: depth error grows with the cone width
DEPTH_HALF_ANGLE = float(np.deg2rad(10.0))
DEPTH_K = 16


def _axial_pick(off: np.ndarray, u: np.ndarray, valid: np.ndarray):
    """Projection onto ``u`` of the valid offset closest to the axis (ties: first)."""
    proj = np.einsum("...kd,...d->...k", off, u)
    dist = np.sqrt(np.einsum("...kd,...kd->...k", off, off))
    with np.errstate(divide="ignore", invalid="ignore"):
        cos = np.where(dist > 0.0, proj / dist, 1.0)
    j = np.argmax(np.where(valid, cos, -np.inf), axis=-1)
    return np.take_along_axis(proj, j[..., None], axis=-1)[..., 0]


def estimate_radial_depth(obs: RadialObservation) -> Optional[float]:
    """Depth of the first surface from the anchor toward the query, or None.

    The estimate is the axial projection of the in-cone observed point with the
    smallest angular deviation from the axis. Points far off-axis underestimate
    the depth by a factor ``cos(deviation)``, so the most axial one is used
    rather than the nearest.
    """
    if obs.zero_axis or obs.r_norm == 0.0 or not np.any(obs.valid):
        return None
    return float(_axial_pick(obs.observed, obs.r / obs.r_norm, obs.valid))


def radial_depth_estimates(index: SpatialIndex, anchor, X, half_angle: float = DEPTH_HALF_ANGLE,
                           k: int = DEPTH_K) -> np.ndarray:
    """Vectorized depth estimates from one anchor; NaN where the cone is empty."""
    apex = np.asarray(anchor, dtype=np.float64)
    r = np.asarray(X, dtype=np.float64) - apex
    rn = _norms(r)
    out = np.full(len(r), np.nan)
    rows = np.nonzero(rn > 0.0)[0]
    if len(rows):
        u = r[rows] / rn[rows, None]
        idx, n_in = index.view(apex, half_angle).top_k(u, k)
        valid = np.arange(idx.shape[1])[None, :] < n_in[:, None]
        depth = _axial_pick(index.points[idx] - apex, u, valid)
        hit = n_in > 0
        out[rows[hit]] = depth[hit]
    return out


def decide_exterior(r_norm, depth, empty_cone: str = "covered") -> np.ndarray:
    """Inside flags from ``(q, m)`` query distances and depth estimates (NaN = empty cone).

    A query is outside as soon as one anchor reaches it before its depth.
    """
    r_norm = np.asarray(r_norm, dtype=float)
    depth = np.asarray(depth, dtype=float)
    seen = ~np.isnan(depth)
    if empty_cone == "covered":
        depth = np.where(seen, depth, np.inf)
    # NaN never compares true, so abstaining anchors cover nothing
    covered = r_norm <= depth
    inside = ~covered.any(axis=1)
    if empty_cone == "abstain" and np.any(inside & ~seen.any(axis=1)):
        raise ValueError("no observations: some queries are not observed by any anchor")
    return inside


def heuristic_occupancy_batch(index: SpatialIndex, anchors: AnchorSet, X,
                              half_angle: float = DEPTH_HALF_ANGLE, k: int = DEPTH_K,
                              empty_cone: str = "covered") -> np.ndarray:
    """Inside iff no anchor sees the query in front of its depth estimate.

    Anchors are assumed to lie outside the shape. ``empty_cone`` decides what an
    anchor with no points in its cone means: ``"covered"`` treats the ray as
    escaping (infinite depth, so the query is visible and outside), while
    ``"abstain"`` ignores that anchor and raises when no anchor observes a query.
    """
    if empty_cone not in ("covered", "abstain"):
        raise ValueError(f"empty_cone must be 'covered' or 'abstain', got {empty_cone!r}")
    X = as_points(X, name="queries")
    outside = np.zeros(len(X), dtype=bool)
    observed = np.zeros(len(X), dtype=bool)
    for a in _positions(anchors):
        rows = np.nonzero(~outside)[0]
        if not len(rows):
            break
        depth = radial_depth_estimates(index, a, X[rows], half_angle, k)
        seen = ~np.isnan(depth)
        observed[rows[seen]] = True
        if empty_cone == "covered":
            depth[~seen] = np.inf
        rn = _norms(X[rows] - a)
        outside[rows[rn <= depth]] = True
    blind = ~observed & ~outside
    if empty_cone == "abstain" and blind.any():
        raise ValueError(f"no observations: {int(blind.sum())} queries are not observed by any anchor")
    return ~outside


def heuristic_occupancy_exterior(index: SpatialIndex, anchors: AnchorSet, x,
                                 half_angle: float = DEPTH_HALF_ANGLE, k: int = DEPTH_K,
                                 empty_cone: str = "covered") -> bool:
    return bool(heuristic_occupancy_batch(index, anchors, np.atleast_2d(x), half_angle, k, empty_cone)[0])


# ---------------------------------------------------------------------------
# binary encoding

ENC_MAGIC = b"AROENC01"
_HEADER = struct.Struct("<8sIII")


def encoding_dtype(m: int, k: int) -> np.dtype:
    """One little-endian record per query: the query point, then one entry per anchor."""
    anchor = np.dtype([
        ("r", "<f8", (3,)),
        ("r_norm", "<f8"),
        ("observed", "<f8", (k, 3)),
        ("valid", "u1", (k,)),
    ])
    return np.dtype([("x", "<f8", (3,)), ("anchors", anchor, (m,))])


def write_encoding(path, batch: AroBatch) -> None:
    """Header ``magic, m, k, n_queries`` (uint32) followed by the per-query records."""
    q, m, k = batch.shape
    rec = np.zeros(q, dtype=encoding_dtype(m, k))
    rec["x"] = batch.queries
    rec["anchors"]["r"] = batch.r
    rec["anchors"]["r_norm"] = batch.r_norm
    rec["anchors"]["observed"] = batch.observed
    rec["anchors"]["valid"] = batch.valid
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(ENC_MAGIC, m, k, q))
        fh.write(rec.tobytes())


def read_encoding(path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic, m, k, q = _HEADER.unpack(fh.read(_HEADER.size))
        if magic != ENC_MAGIC:
            raise ValueError(f"{path}: not an ARO encoding file")
        rec = np.frombuffer(fh.read(), dtype=encoding_dtype(m, k))
    if len(rec) != q:
        raise ValueError(f"{path}: header declares {q} queries, found {len(rec)}")
    return rec
