"""Scikit-learn style wrappers around the encoder, the oracles and the 2D network.

These follow the estimator conventions (constructor stores hyperparameters
only, ``fit`` returns ``self``, learned state ends in ``_``) so they work with
``get_params``/``set_params`` and ``clone``. What ``fit`` consumes differs by
estimator: a point cloud, a mesh or a 2D shape.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import visibility as vis
from ._validation import as_points
from .anchors import AnchorSet, Strategy, make_anchors, ring_anchors_2d
from .geometry import Aabb, TriMesh
from .nn2d.net import NetConfig, forward
from .nn2d.shapes import DEFAULT_BOX, Shape2D, features_2d
from .nn2d.train import TrainConfig, anchor_activation_map, reconstruct_image, train
from .observation import (DEPTH_HALF_ANGLE, DEPTH_K, extract_aro_batch,
                          heuristic_occupancy_batch)
from .spatial import DEFAULT_HALF_ANGLE, DEFAULT_K, SpatialIndex


def _anchor_set(anchors, m: int, strategy: str, seed: int) -> AnchorSet:
    if anchors is None:
        return make_anchors(strategy, m, seed)
    if isinstance(anchors, AnchorSet):
        return anchors
    return AnchorSet(np.asarray(anchors, dtype=float), Strategy.CUSTOM)


class AroEncoder(TransformerMixin, BaseEstimator):
    """Fit on a point cloud; transform queries into flat per-anchor features.

    Each query row holds, per anchor, ``r`` (3), ``|r|`` (1), the ``k``
    anchor-relative observed points (``3k``) and their in-cone flags (``k``).
    """

    def __init__(self, anchors=None, m: int = 48, strategy: str = "fibonacci", seed: int = 0,
                 half_angle: float = DEFAULT_HALF_ANGLE, k: int = DEFAULT_K):
        self.anchors = anchors
        self.m = m
        self.strategy = strategy
        self.seed = seed
        self.half_angle = half_angle
        self.k = k

    def fit(self, X, y=None):
        self.index_ = SpatialIndex(as_points(X, name="cloud"))
        self.anchors_ = _anchor_set(self.anchors, self.m, self.strategy, self.seed)
        self.n_features_in_ = 3
        return self

    def encode(self, Q):
        check_is_fitted(self, "index_")
        return extract_aro_batch(self.index_, self.anchors_, Q, self.half_angle, self.k)

    def transform(self, Q):
        b = self.encode(Q)
        q, m, k = b.shape
        parts = [b.r, b.r_norm[..., None], b.observed.reshape(q, m, 3 * k), b.valid.astype(float)]
        return np.concatenate(parts, axis=-1).reshape(q, -1)


class HeuristicOccupancy(ClassifierMixin, BaseEstimator):
    """Point-cloud occupancy from exterior anchors and estimated radial depths."""

    def __init__(self, anchors=None, m: int = 48, shell_radius: float = 0.6,
                 half_angle: float = DEPTH_HALF_ANGLE, k: int = DEPTH_K, empty_cone: str = "covered"):
        self.anchors = anchors
        self.m = m
        self.shell_radius = shell_radius
        self.half_angle = half_angle
        self.k = k
        self.empty_cone = empty_cone

    def fit(self, X, y=None):
        from .anchors import fibonacci_sphere_directions

        self.index_ = SpatialIndex(as_points(X, name="cloud"))
        if self.anchors is None:
            shell = self.shell_radius * fibonacci_sphere_directions(self.m)
            self.anchors_ = AnchorSet(shell, Strategy.CUSTOM)
        else:
            self.anchors_ = _anchor_set(self.anchors, self.m, "fibonacci", 0)
        self.classes_ = np.array([0, 1])
        return self

    def predict(self, Q):
        check_is_fitted(self, "index_")
        return heuristic_occupancy_batch(self.index_, self.anchors_, Q, self.half_angle, self.k,
                                         self.empty_cone).astype(np.int64)


class VisibilityOracle(ClassifierMixin, BaseEstimator):
    """Exact occupancy of a watertight mesh from anchor visibility.

    ``mode="auto"`` classifies the anchors and picks the interior, exterior or
    mixed procedure. The mixed procedure labels a grid of ``resolution`` cells,
    and ``predict`` looks queries up in it.
    """

    def __init__(self, anchors=None, m: int = 48, strategy: str = "fibonacci", seed: int = 0,
                 mode: str = "auto", resolution: int = 64, box: Aabb | None = None):
        self.anchors = anchors
        self.m = m
        self.strategy = strategy
        self.seed = seed
        self.mode = mode
        self.resolution = resolution
        self.box = box

    def fit(self, mesh: TriMesh, y=None):
        if not isinstance(mesh, TriMesh):
            raise TypeError("VisibilityOracle.fit expects a TriMesh")
        A = _anchor_set(self.anchors, self.m, self.strategy, self.seed).positions
        cls = vis.classify_anchors(mesh, A)
        mode = self.mode
        if mode == "auto":
            if np.all(cls == vis.AnchorClass.INTERIOR):
                mode = "interior"
            elif np.all(cls == vis.AnchorClass.EXTERIOR):
                mode = "exterior"
            else:
                mode = "mixed"
        if mode not in ("interior", "exterior", "mixed"):
            raise ValueError(f"unknown mode {self.mode!r}")
        self.mesh_, self.anchors_, self.mode_, self.classes_ = mesh, A, mode, np.array([0, 1])
        self.box_ = self.box or vis.default_box(mesh, A)
        self.grid_ = None
        if mode == "mixed":
            self.grid_ = vis.oracle_occupancy_mixed(mesh, A, self.resolution, self.box_, cls)
        return self

    def predict(self, Q):
        check_is_fitted(self, "mesh_")
        Q = as_points(Q, name="queries")
        if self.mode_ == "interior":
            out = vis.oracle_occupancy_interior(self.mesh_, self.anchors_, Q, self.box_)
        elif self.mode_ == "exterior":
            out = vis.oracle_occupancy_exterior(self.mesh_, self.anchors_, Q, self.box_)
        else:
            out = self.grid_.lookup(Q)
        return np.asarray(out).astype(np.int64)


class AroNet2D(ClassifierMixin, BaseEstimator):
    """The 2D attention network; ``fit`` takes a ``Shape2D`` (or a list of them).

    Features need the shape's hit distances, so ``predict`` works on the last
    fitted shape unless another one is passed.
    """

    def __init__(self, m: int = 7, anchors=None, epochs: int = 300, n_samples: int = 20_000,
                 batch_size: int = 256, lr: float = 3e-4, seed: int = 0, subset_prob: float = 0.0,
                 d_model: int = 64, n_heads: int = 4, d_ff: int = 128, n_layers: int = 3):
        self.m = m
        self.anchors = anchors
        self.epochs = epochs
        self.n_samples = n_samples
        self.batch_size = batch_size
        self.lr = lr
        self.seed = seed
        self.subset_prob = subset_prob
        self.d_model = d_model
        self.n_heads = n_heads
        self.d_ff = d_ff
        self.n_layers = n_layers

    def fit(self, shapes, y=None):
        A = ring_anchors_2d(self.m).positions if self.anchors is None else np.asarray(self.anchors, float)
        net = NetConfig(4, self.d_model, self.n_heads, self.d_ff, self.n_layers)
        cfg = TrainConfig(lr=self.lr, batch_size=self.batch_size, epochs=self.epochs, seed=self.seed,
                          n_samples=self.n_samples, subset_prob=self.subset_prob, net=net)
        res = train(shapes, A, cfg)
        self.params_, self.loss_curve_, self.anchors_ = res.params, res.losses, A
        self.shape_ = shapes if isinstance(shapes, Shape2D) else shapes[-1]
        self.classes_ = np.array([0, 1])
        return self

    def predict_proba(self, X, shape: Shape2D | None = None, active_mask=None):
        check_is_fitted(self, "params_")
        X = as_points(X, dim=2, name="queries")
        p = forward(self.params_, features_2d(shape or self.shape_, self.anchors_, X, DEFAULT_BOX),
                    active_mask)
        return np.stack([1.0 - p, p], axis=1)

    def predict(self, X, shape: Shape2D | None = None):
        return (self.predict_proba(X, shape)[:, 1] >= 0.5).astype(np.int64)

    def reconstruct(self, resolution: int = 128, shape: Shape2D | None = None):
        check_is_fitted(self, "params_")
        return reconstruct_image(self.params_, shape or self.shape_, self.anchors_, resolution)

    def activation_map(self, anchor_id: int, resolution: int = 128, shape: Shape2D | None = None):
        check_is_fitted(self, "params_")
        return anchor_activation_map(self.params_, shape or self.shape_, self.anchors_, anchor_id, resolution)
