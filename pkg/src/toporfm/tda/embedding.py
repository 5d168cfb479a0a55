from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DataError, WindowError


@dataclass(frozen=True)
class PointCloud:
    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2 or pts.shape[1] < 1:
            raise DataError(f"points must be an (N, w) array, got shape {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise DataError("point cloud has non-finite coordinates")
        object.__setattr__(self, "points", pts)

    @property
    def w(self) -> int:
        return self.points.shape[1]

    def __len__(self):
        return self.points.shape[0]


def delay_embed(series, window: int = 4, stride: int = 1) -> PointCloud:
    """Sliding-window delay embedding.

    Point ``k`` is ``series[k*stride : k*stride + window]``; there are
    ``(T - window) // stride + 1`` points.
    """
    x = np.asarray(series, dtype=float).ravel()
    if window < 1 or stride < 1:
        raise WindowError("window and stride must be positive")
    if window > len(x):
        raise WindowError(f"window {window} longer than series of length {len(x)}")
    starts = np.arange(0, len(x) - window + 1, stride)
    return PointCloud(x[starts[:, None] + np.arange(window)])
