"""Training loop, image reconstruction, activation maps and model files."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from ..geometry import Aabb
from .net import AttentionNetParams, NetConfig, forward, loss_and_gradients
from .shapes import DEFAULT_BOX, Shape2D, features_2d, sample_training_set

log = logging.getLogger(__name__)

MODEL_MAGIC = "ARO-NN2D v1"


@dataclass(frozen=True)
class TrainConfig:
    """Adam with a step decay: ``lr(epoch) = lr * decay ** (epoch // decay_every)``."""

    lr: float = 3e-4
    decay: float = 0.5
    decay_every: int = 100
    batch_size: int = 256
    epochs: int = 300
    seed: int = 0
    n_samples: int = 20_000
    band_sigma: float = 0.03
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    # probability of training a minibatch on a random nonempty anchor subset
    subset_prob: float = 0.0
    net: NetConfig = field(default_factory=NetConfig)

    def __post_init__(self):
        if not (self.lr > 0 and self.eps > 0 and 0 < self.decay <= 1):
            raise ValueError("lr and eps must be positive and decay in (0, 1]")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("Adam betas must lie in [0, 1)")
        if self.epochs < 1 or self.batch_size < 1 or self.decay_every < 1 or self.n_samples < 1:
            raise ValueError("epochs, batch_size, decay_every and n_samples must be >= 1")
        if not 0.0 <= self.subset_prob <= 1.0:
            raise ValueError("subset_prob must lie in [0, 1]")

    def learning_rate(self, epoch: int) -> float:
        return self.lr * self.decay ** (epoch // self.decay_every)


@dataclass
class TrainResult:
    params: AttentionNetParams
    losses: list


def _seeds(seed: int):
    """Independent streams for init, sampling and shuffling."""
    ss = np.random.SeedSequence(seed)
    return [np.random.Generator(np.random.PCG64(s)) for s in ss.spawn(3)]


def build_dataset(shapes: Sequence[Shape2D], anchors, cfg: TrainConfig, rng: np.random.Generator,
                  box: Aabb = DEFAULT_BOX):
    """Features and labels for ``cfg.n_samples`` queries split evenly over ``shapes``."""
    feats, labels = [], []
    counts = np.full(len(shapes), cfg.n_samples // len(shapes))
    counts[: cfg.n_samples % len(shapes)] += 1
    A = np.asarray(anchors, dtype=float)
    for shape, n in zip(shapes, counts):
        X, y = sample_training_set(shape, int(n), rng, cfg.band_sigma, box)
        # a query on an anchor has no ray direction; nudge it off deterministically
        on = (np.abs(X[:, None, :] - A[None]).max(axis=-1) == 0).any(axis=1)
        X[on] += 1e-6
        feats.append(features_2d(shape, A, X, box))
        labels.append(y)
    return np.concatenate(feats), np.concatenate(labels)


def train(shapes, anchors, cfg: TrainConfig = TrainConfig(), box: Aabb = DEFAULT_BOX,
          callback: Optional[Callable[[int, float], None]] = None) -> TrainResult:
    """Fit the network on one shape or a list of shapes.

    Deterministic for a fixed ``cfg.seed``. Raises ``FloatingPointError`` with
    the epoch index when the loss stops being finite.
    """
    if isinstance(shapes, Shape2D):
        shapes = [shapes]
    if len(shapes) == 0:
        raise ValueError("no shapes to train on")
    anchors = np.asarray(anchors, dtype=float).reshape(-1, 2)
    init_rng, data_rng, shuffle_rng = _seeds(cfg.seed)
    F, y = build_dataset(shapes, anchors, cfg, data_rng, box)
    params = AttentionNetParams.init(cfg.net, int(init_rng.integers(2 ** 63)))
    m1 = np.zeros_like(params.flat)
    m2 = np.zeros_like(params.flat)
    step = 0
    losses = []
    n, m = len(y), len(anchors)
    for epoch in range(cfg.epochs):
        lr = cfg.learning_rate(epoch)
        order = shuffle_rng.permutation(n)
        total = 0.0
        for s in range(0, n, cfg.batch_size):
            rows = order[s:s + cfg.batch_size]
            mask = None
            if cfg.subset_prob > 0 and shuffle_rng.random() < cfg.subset_prob:
                size = int(shuffle_rng.integers(1, m + 1))
                mask = shuffle_rng.choice(m, size=size, replace=False)
            loss, g = loss_and_gradients(params, F[rows], y[rows], mask)
            if not np.isfinite(loss) or not np.all(np.isfinite(g)):
                raise FloatingPointError(f"training diverged at epoch {epoch}: loss {loss}")
            step += 1
            m1 = cfg.beta1 * m1 + (1 - cfg.beta1) * g
            m2 = cfg.beta2 * m2 + (1 - cfg.beta2) * g * g
            mh = m1 / (1 - cfg.beta1 ** step)
            vh = m2 / (1 - cfg.beta2 ** step)
            params.flat -= lr * mh / (np.sqrt(vh) + cfg.eps)
            total += loss * len(rows)
        epoch_loss = total / n
        if not np.isfinite(epoch_loss):
            raise FloatingPointError(f"training diverged at epoch {epoch}: loss {epoch_loss}")
        losses.append(epoch_loss)
        log.info("epoch %d lr %.3g loss %.6f", epoch, lr, epoch_loss)
        if callback is not None:
            callback(epoch, epoch_loss)
    return TrainResult(params, losses)


def mean_bce(params: AttentionNetParams, features, labels, active_mask=None, chunk: int = 8192) -> float:
    total = 0.0
    for s in range(0, len(labels), chunk):
        loss, _ = loss_and_gradients(params, features[s:s + chunk], labels[s:s + chunk], active_mask)
        total += loss * len(labels[s:s + chunk])
    return total / len(labels)


# ---------------------------------------------------------------------------
# images


def pixel_centers(resolution: int, box: Aabb = DEFAULT_BOX) -> np.ndarray:
    """Pixel-center queries indexed ``[i, j] -> (x_i, y_j)``, flattened in C order."""
    h = box.extent / resolution
    xs = box.min[0] + h[0] * (np.arange(resolution) + 0.5)
    ys = box.min[1] + h[1] * (np.arange(resolution) + 0.5)
    return np.stack(np.meshgrid(xs, ys, indexing="ij"), axis=-1).reshape(-1, 2)


def _predict_image(params, shape, anchors, resolution, active_mask, box, chunk=8192):
    X = pixel_centers(resolution, box)
    A = np.asarray(anchors, dtype=float).reshape(-1, 2)
    out = np.empty(len(X))
    for s in range(0, len(X), chunk):
        xs = X[s:s + chunk]
        out[s:s + chunk] = forward(params, features_2d(shape, A, xs, box), active_mask)
    return out.reshape(resolution, resolution)


def reconstruct_image(params: AttentionNetParams, shape: Shape2D, anchors, resolution: int,
                      box: Aabb = DEFAULT_BOX) -> np.ndarray:
    """Predicted occupancy at every pixel center; ``image[i, j]`` is column x_i, row y_j."""
    return _predict_image(params, shape, anchors, resolution, None, box)


def anchor_activation_map(params: AttentionNetParams, shape: Shape2D, anchors, anchor_id: int,
                          resolution: int, box: Aabb = DEFAULT_BOX) -> np.ndarray:
    """Prediction with every anchor except ``anchor_id`` removed from attention."""
    m = len(np.asarray(anchors).reshape(-1, 2))
    if not (0 <= int(anchor_id) < m) or int(anchor_id) != anchor_id:
        raise ValueError(f"anchor id {anchor_id!r} out of range [0, {m})")
    return _predict_image(params, shape, anchors, resolution, [int(anchor_id)], box)


def rasterize(shape: Shape2D, resolution: int, box: Aabb = DEFAULT_BOX) -> np.ndarray:
    """Ground-truth occupancy at pixel centers."""
    return shape.contains(pixel_centers(resolution, box)).reshape(resolution, resolution)


def image_iou(a, b) -> float:
    a, b = np.asarray(a, bool), np.asarray(b, bool)
    union = np.count_nonzero(a | b)
    return 1.0 if union == 0 else np.count_nonzero(a & b) / union


# ---------------------------------------------------------------------------
# model files


def save_model(path, params: AttentionNetParams, anchors, box: Aabb = DEFAULT_BOX) -> None:
    """ASCII header (config, anchors, box) then the parameters as little-endian float64."""
    A = np.asarray(anchors, dtype=float).reshape(-1, 2)
    cfg = params.config
    lines = [MODEL_MAGIC, " ".join(f"{k}={v}" for k, v in asdict(cfg).items()),
             f"box {box.min[0]:.17g} {box.min[1]:.17g} {box.max[0]:.17g} {box.max[1]:.17g}",
             f"anchors {len(A)}"]
    lines += [f"{x:.17g} {y:.17g}" for x, y in A]
    lines.append(f"params {len(params)}")
    with open(path, "wb") as fh:
        fh.write(("\n".join(lines) + "\n").encode("ascii"))
        fh.write(params.flat.astype("<f8").tobytes())


def load_model(path):
    """Returns ``(params, anchors, box)``."""
    with open(path, "rb") as fh:
        if fh.readline().decode("ascii").strip() != MODEL_MAGIC:
            raise ValueError(f"{path}: not an {MODEL_MAGIC} file")
        kv = dict(t.split("=") for t in fh.readline().decode("ascii").split())
        cfg = NetConfig(**{k: int(v) for k, v in kv.items()})
        b = [float(t) for t in fh.readline().decode("ascii").split()[1:]]
        m = int(fh.readline().decode("ascii").split()[1])
        A = np.array([[float(t) for t in fh.readline().decode("ascii").split()] for _ in range(m)])
        n = int(fh.readline().decode("ascii").split()[1])
        flat = np.frombuffer(fh.read(), dtype="<f8")
    if flat.size != n:
        raise ValueError(f"{path}: header declares {n} parameters, found {flat.size}")
    return AttentionNetParams(cfg, flat), A, Aabb(b[:2], b[2:])
