"""Input validation helpers in the spirit of ``sklearn.utils.validation``."""
from __future__ import annotations

import numpy as np


def check_point_cloud(X, dim: int | None = None, min_points: int = 1) -> np.ndarray:
    """Return ``X`` as a finite ``(n_points, dim)`` float array."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(1, -1)
    if X.ndim != 2:
        raise ValueError(f"expected a 2D array of points, got ndim={X.ndim}")
    if X.shape[0] < min_points:
        raise ValueError(f"need at least {min_points} points, got {X.shape[0]}")
    if dim is not None and X.shape[1] != dim:
        raise ValueError(f"expected points of dimension {dim}, got {X.shape[1]}")
    if not np.all(np.isfinite(X)):
        raise ValueError("point cloud contains non-finite values")
    return X


def check_vector(v, dim: int, name: str = "vector") -> np.ndarray:
    v = np.asarray(v, dtype=float).reshape(-1)
    if v.size != dim:
        raise ValueError(f"{name} must have {dim} entries, got {v.size}")
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{name} must be finite")
    return v


def check_probability(value: float, name: str, *, open_interval: bool = True) -> float:
    value = float(value)
    ok = 0.0 < value < 1.0 if open_interval else 0.0 <= value <= 1.0
    if not ok:
        raise ValueError(f"{name} must lie in {'(0, 1)' if open_interval else '[0, 1]'}, got {value}")
    return value


def check_positive(value: float, name: str) -> float:
    value = float(value)
    if not value > 0.0 or not np.isfinite(value):
        raise ValueError(f"{name} must be positive and finite, got {value}")
    return value
