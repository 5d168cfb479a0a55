from __future__ import annotations

import numpy as np

from ..errors import ShapeError


def rmse(x1, x2) -> float:
    """Root mean squared difference of two equal-length series."""
    a = np.asarray(x1, dtype=float).ravel()
    b = np.asarray(x2, dtype=float).ravel()
    if a.shape != b.shape:
        raise ShapeError(f"length mismatch: {a.size} vs {b.size}")
    if a.size == 0:
        raise ShapeError("rmse of empty series")
    return float(np.sqrt(np.mean((a - b) ** 2)))


def column_rmse(actual: np.ndarray, predicted: np.ndarray) -> np.ndarray:
    """RMSE per column of two T x n matrices."""
    actual = np.asarray(actual, dtype=float)
    predicted = np.asarray(predicted, dtype=float)
    if actual.shape != predicted.shape:
        raise ShapeError(f"shape mismatch: {actual.shape} vs {predicted.shape}")
    if actual.shape[0] == 0:
        raise ShapeError("rmse of empty series")
    return np.sqrt(np.mean((actual - predicted) ** 2, axis=0))
