"""Delay embeddings, Rips persistence and barcode features.

The column reduction runs in a compiled extension (``_reduce``) when it is
built and falls back to ``_reduce_py`` otherwise; ``BACKEND`` tells which.
Set ``TOPORFM_PURE_PYTHON=1`` to force the fallback.
"""

import numpy as np

from .embedding import PointCloud, delay_embed
from .features import FEATURE_NAMES, barcode_features
from .rips import (
    BACKEND,
    Barcode,
    PersistenceDiagram,
    PersistencePair,
    barcode,
    diagram_from_csv,
    diagram_to_csv,
    enclosing_radius,
    pairwise_distances,
    rips_persistence,
)


def series_features(series, window: int = 4, stride: int = 1):
    """Embed, compute H0/H1 persistence and summarize in one call."""
    cloud = delay_embed(series, window, stride)
    pts = np.unique(cloud.points, axis=0)
    cap = enclosing_radius(pairwise_distances(pts))
    if cap <= 0:
        # every window identical: one infinite H0 bar of no length
        return np.zeros(10)
    dgm = rips_persistence(cloud, max_scale=cap)
    return barcode_features(barcode(dgm), cap)


__all__ = [
    "BACKEND", "Barcode", "FEATURE_NAMES", "PersistenceDiagram", "PersistencePair",
    "PointCloud", "barcode", "barcode_features", "delay_embed", "diagram_from_csv",
    "diagram_to_csv", "enclosing_radius", "pairwise_distances", "rips_persistence", "series_features",
]
