"""Anchor placement strategies and the ASCII anchor-set format."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ._validation import check_count
from .geometry import SHAPE_RADIUS

#: radius schedule indexed by ``i % 3``
LAYER_RADII = (0.5, 0.25, 0.125)
GRID_LEVELS = (-0.5, -0.25, 0.0, 0.25, 0.5)


class Strategy(str, enum.Enum):
    LAYERED_FIBONACCI = "fibonacci"
    UNIFORM_BALL = "uniform"
    GRID_SAMPLE = "grid"
    RING_2D = "ring2d"
    CUSTOM = "custom"


@dataclass(frozen=True)
class AnchorSet:
    positions: np.ndarray
    strategy: Strategy
    seed: Optional[int] = None

    def __post_init__(self):
        pos = np.array(self.positions, dtype=np.float64)
        if pos.ndim != 2 or pos.shape[0] < 1 or pos.shape[1] not in (2, 3):
            raise ValueError(f"anchor positions must be (m, 2|3) with m >= 1, got {pos.shape}")
        if not np.all(np.isfinite(pos)):
            raise ValueError("anchor positions must be finite")
        pos.setflags(write=False)
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "strategy", Strategy(self.strategy))

    def __len__(self) -> int:
        return len(self.positions)

    @property
    def m(self) -> int:
        return len(self.positions)

    @property
    def dim(self) -> int:
        return self.positions.shape[1]


def _rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(int(seed)))


def fibonacci_sphere_directions(m: int) -> np.ndarray:
    """Spherical Fibonacci lattice: ``z_i = 1 - (2i+1)/m``, azimuth ``i * pi * (3 - sqrt 5)``."""
    m = check_count(m)
    i = np.arange(m, dtype=np.float64)
    z = 1.0 - (2.0 * i + 1.0) / m
    phi = i * np.pi * (3.0 - np.sqrt(5.0))
    rho = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    d = np.stack([rho * np.cos(phi), rho * np.sin(phi), z], axis=1)
    return d / np.linalg.norm(d, axis=1, keepdims=True)


def layered_fibonacci(m: int) -> AnchorSet:
    dirs = fibonacci_sphere_directions(m)
    radii = np.array(LAYER_RADII)[np.arange(len(dirs)) % 3]
    return AnchorSet(dirs * radii[:, None], Strategy.LAYERED_FIBONACCI)


def uniform_ball(m: int, seed: int) -> AnchorSet:
    """``m`` points uniform in the ball of radius 0.5."""
    m = check_count(m)
    rng = _rng(seed)
    d = rng.standard_normal((m, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    r = SHAPE_RADIUS * rng.random(m) ** (1.0 / 3.0)
    return AnchorSet(d * r[:, None], Strategy.UNIFORM_BALL, int(seed))


def grid_points() -> np.ndarray:
    g = np.array(GRID_LEVELS)
    return np.stack(np.meshgrid(g, g, g, indexing="ij"), axis=-1).reshape(-1, 3)


def grid_sample(m: int, seed: int) -> AnchorSet:
    """All 5x5x5 grid points inside the radius-0.5 ball, topped up at random from the rest."""
    m = check_count(m)
    pts = grid_points()
    if m > len(pts):
        raise ValueError(f"grid_sample supports at most {len(pts)} anchors, got m={m}")
    inside = np.linalg.norm(pts, axis=1) <= SHAPE_RADIUS + 1e-12
    core, rest = pts[inside], pts[~inside]
    if m <= len(core):
        # fewer anchors than the in-sphere core: seeded subset of the core
        pick = np.sort(_rng(seed).choice(len(core), size=m, replace=False))
        return AnchorSet(core[pick], Strategy.GRID_SAMPLE, int(seed))
    pick = np.sort(_rng(seed).choice(len(rest), size=m - len(core), replace=False))
    return AnchorSet(np.vstack([core, rest[pick]]), Strategy.GRID_SAMPLE, int(seed))


def ring_anchors_2d(m: int) -> AnchorSet:
    """Uniform angles ``2 pi i / m`` with the ``i % 3`` radius schedule."""
    m = check_count(m)
    i = np.arange(m)
    ang = 2.0 * np.pi * i / m
    r = np.array(LAYER_RADII)[i % 3]
    return AnchorSet(np.stack([r * np.cos(ang), r * np.sin(ang)], axis=1), Strategy.RING_2D)


def make_anchors(strategy, m: int, seed: int = 0) -> AnchorSet:
    strategy = Strategy(strategy)
    if strategy is Strategy.LAYERED_FIBONACCI:
        return layered_fibonacci(m)
    if strategy is Strategy.UNIFORM_BALL:
        return uniform_ball(m, seed)
    if strategy is Strategy.GRID_SAMPLE:
        return grid_sample(m, seed)
    if strategy is Strategy.RING_2D:
        return ring_anchors_2d(m)
    raise ValueError("custom anchor sets are read from a file, not generated")


def write_anchors(path, anchors: AnchorSet) -> None:
    """Header ``m strategy seed`` (seed ``-`` when unseeded), then one position per line."""
    seed = "-" if anchors.seed is None else str(anchors.seed)
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(f"{anchors.m} {anchors.strategy.value} {seed}\n")
        for p in anchors.positions:
            fh.write(" ".join(f"{c:.17g}" for c in p) + "\n")


def read_anchors(path) -> AnchorSet:
    with open(path, "r", encoding="ascii") as fh:
        header = fh.readline().split()
        if len(header) != 3:
            raise ValueError(f"{path}: anchor header must be 'm strategy seed'")
        m, strategy, seed = int(header[0]), header[1], header[2]
        rows = [[float(x) for x in line.split()] for line in fh if line.strip()]
    if len(rows) != m:
        raise ValueError(f"{path}: header declares {m} anchors, found {len(rows)}")
    return AnchorSet(np.array(rows), strategy, None if seed == "-" else int(seed))
