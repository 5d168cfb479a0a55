from __future__ import annotations

import numpy as np

from .rips import Barcode

FEATURE_NAMES = tuple(
    f"h{d}_{name}" for d in (0, 1)
    for name in ("count", "max", "mean", "sum", "entropy")
)


def barcode_features(bc: Barcode, cap_scale: float) -> np.ndarray:
    """Ten summary statistics of a barcode: per dimension 0 and 1, the number
    of bars, max/mean/sum of persistence and persistence entropy.

    Infinite deaths are capped at ``cap_scale`` and counted as bars. Bars of
    zero persistence carry no information and are ignored.
    """
    out = np.zeros(10)
    for d in (0, 1):
        bars = bc.in_dim(d)
        if not len(bars):
            continue
        deaths = np.where(np.isinf(bars[:, 1]), cap_scale, bars[:, 1])
        pers = deaths - bars[:, 0]
        pers = pers[pers > 0]
        if not len(pers):
            continue
        total = pers.sum()
        p = pers / total
        entropy = float(-(p * np.log(p)).sum()) if len(pers) > 1 else 0.0
        out[5 * d:5 * d + 5] = (len(pers), pers.max(), pers.mean(), total, max(entropy, 0.0))
    return out
