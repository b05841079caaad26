"""Input validation helpers shared by the estimators and functional API."""

from __future__ import annotations

import numpy as np
from sklearn.utils import check_array


def as_points(X, dim: int = 3, name: str = "X", allow_empty: bool = False) -> np.ndarray:
    """Validate an (n, dim) float array of finite coordinates."""
    if allow_empty and np.size(X) == 0:
        return np.zeros((0, dim))
    try:
        arr = check_array(X, dtype=np.float64, ensure_2d=True, ensure_all_finite=True, copy=True,
                          input_name=name)
    except ValueError as exc:
        raise ValueError(f"{name}: {exc}") from None
    if arr.shape[1] != dim:
        raise ValueError(f"{name} must have shape (n, {dim}), got {arr.shape}")
    return arr


def as_vector(v, dim: int, name: str = "vector") -> np.ndarray:
    a = np.array(v, dtype=np.float64).ravel()
    if a.size != dim:
        raise ValueError(f"{name} must have {dim} components, got {a.size}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} must be finite")
    return a


def check_count(m, name: str = "m", minimum: int = 1) -> int:
    if isinstance(m, bool) or int(m) != m:
        raise TypeError(f"{name} must be an integer")
    m = int(m)
    if m < minimum:
        raise ValueError(f"{name} must be >= {minimum}, got {m}")
    return m


def check_half_angle(theta: float) -> float:
    theta = float(theta)
    if not (0.0 < theta < np.pi / 2):
        raise ValueError(f"half_angle must lie in (0, pi/2) radians, got {theta}")
    return theta
