"""Masked T x n observation matrix shared by ingest, forecast and clusterwise."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DataError, ShapeError


@dataclass(frozen=True)
class SeriesMatrix:
    """Columns are series, rows are periods.

    ``observed`` is the sparsity pattern; unobserved entries of ``values`` are
    ignored by every loss and may hold anything finite.
    """

    values: np.ndarray
    observed: np.ndarray
    ids: tuple = field(default=())

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if values.ndim != 2:
            raise ShapeError(f"expected a 2-D matrix, got shape {values.shape}")
        observed = np.asarray(self.observed, dtype=bool)
        if observed.shape != values.shape:
            raise ShapeError(f"mask shape {observed.shape} != values shape {values.shape}")
        if not np.all(np.isfinite(values[observed])):
            raise DataError("non-finite observed entries")
        values = np.where(observed, values, 0.0)
        ids = tuple(self.ids) if len(self.ids) else tuple(range(values.shape[1]))
        if len(ids) != values.shape[1]:
            raise ShapeError(f"{len(ids)} ids for {values.shape[1]} columns")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "observed", observed)
        object.__setattr__(self, "ids", ids)

    @classmethod
    def dense(cls, values, ids: Sequence = ()) -> "SeriesMatrix":
        values = np.asarray(values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        return cls(values, np.ones(values.shape, dtype=bool), tuple(ids))

    @property
    def T(self) -> int:
        return self.values.shape[0]

    @property
    def n(self) -> int:
        return self.values.shape[1]

    def columns(self, idx) -> "SeriesMatrix":
        idx = np.asarray(idx, dtype=int)
        return SeriesMatrix(self.values[:, idx], self.observed[:, idx],
                            tuple(self.ids[i] for i in idx))

    def rows(self, start: int, stop: int) -> "SeriesMatrix":
        return SeriesMatrix(self.values[start:stop], self.observed[start:stop], self.ids)

    def temporal_split(self, train_fraction: float) -> tuple["SeriesMatrix", "SeriesMatrix"]:
        """Split every series at the same period: the first ``round(f*T)``
        periods train, the rest evaluate."""
        cut = int(round(train_fraction * self.T))
        cut = min(max(cut, 1), self.T - 1)
        return self.rows(0, cut), self.rows(cut, self.T)
