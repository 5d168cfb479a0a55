"""Seeded synthetic data: cloud-usage event logs, two-regime factor series and
RFM archetype users."""

from __future__ import annotations

from dataclasses import dataclass
from datetime import date, timedelta

import numpy as np

from .ingest import EventLog, EventRecord
from .series import SeriesMatrix

ARCHETYPES = ("periodic", "bursty", "constant")


def cloud_event_log(n_users: int = 60, n_weeks: int = 104, seed: int = 0,
                    origin: date = date(2017, 1, 2), bursty_fraction: float = 0.5) -> EventLog:
    """Bookings of CPU time: always-on users book most days, bursty users
    book in a few short campaigns. Quantity is CPU hours, amount its price."""
    rng = np.random.default_rng(seed)
    records = []
    n_days = 7 * n_weeks
    n_bursty = int(round(bursty_fraction * n_users))
    for u in range(n_users):
        uid = f"u{u:05d}"
        rate = rng.uniform(0.5, 3.0)  # price per CPU hour
        if u >= n_bursty:
            scale = rng.uniform(2, 20)
            days = np.flatnonzero(rng.random(n_days) < rng.uniform(0.5, 0.95))
        else:
            scale = rng.uniform(10, 80)
            starts = rng.choice(n_days - 14, size=rng.integers(1, 5), replace=False)
            days = np.unique(np.concatenate(
                [s + np.arange(rng.integers(2, 14)) for s in starts]))
        for d in days:
            hours = max(1, int(rng.poisson(scale)))
            amount = round(hours * rate, 2)
            records.append(EventRecord(uid, origin + timedelta(days=int(d)), hours, amount))
    records.sort(key=lambda r: (r.timestamp, r.user_id))
    return EventLog(tuple(records), n_lines=len(records))


@dataclass(frozen=True)
class TwoRegime:
    train: SeriesMatrix          # series used for clusterwise fitting
    holdout: SeriesMatrix        # further series sharing the same factors
    train_truth: np.ndarray
    holdout_truth: np.ndarray
    factors: np.ndarray          # T x 2


def two_regime(n_per_regime: int = 20, T: int = 60, seed: int = 0, noise: float = 0.01,
               phis: tuple = (0.9, -0.8), n_holdout_per_regime: int = 0) -> TwoRegime:
    """Each regime is one stationary AR(1) factor with unit variance; a series
    is its regime's factor times a positive loading plus Gaussian noise."""
    rng = np.random.default_rng(seed)
    phis = np.asarray(phis, dtype=float)
    innovation_sd = np.sqrt(1.0 - phis ** 2)
    Z = np.zeros((T, len(phis)))
    Z[0] = rng.standard_normal(len(phis))
    for t in range(1, T):
        Z[t] = phis * Z[t - 1] + innovation_sd * rng.standard_normal(len(phis))

    def draw(n_each):
        truth = np.repeat(np.arange(len(phis)), n_each)
        perm = rng.permutation(len(truth))
        truth = truth[perm]
        load = rng.uniform(0.5, 1.5, len(truth))
        Y = Z[:, truth] * load + noise * rng.standard_normal((T, len(truth)))
        return Y, truth

    Ytr, ttr = draw(n_per_regime)
    Yho, tho = draw(n_holdout_per_regime)
    return TwoRegime(SeriesMatrix.dense(Ytr, [f"s{i}" for i in range(Ytr.shape[1])]),
                     SeriesMatrix.dense(Yho, [f"h{i}" for i in range(Yho.shape[1])]),
                     ttr, tho, Z)


def archetype_demand(n_per: int = 20, T: int = 52, seed: int = 0):
    """Weekly demand of periodic, bursty and constant users.

    Returns ``(SeriesMatrix, truth)`` with truth indexing ``ARCHETYPES``.
    """
    rng = np.random.default_rng(seed)
    cols, truth = [], []
    for a, kind in enumerate(ARCHETYPES):
        for _ in range(n_per):
            y = np.zeros(T)
            if kind == "periodic":
                period = 4
                y[rng.integers(period)::period] = rng.uniform(8, 12)
            elif kind == "bursty":
                for s in rng.choice(T - 6, size=2, replace=False):
                    y[s:s + rng.integers(2, 5)] = rng.uniform(30, 60)
            else:
                y[:] = rng.uniform(4, 6)
            cols.append(y)
            truth.append(a)
    Y = np.stack(cols, axis=1)
    ids = [f"a{i:03d}" for i in range(Y.shape[1])]
    return SeriesMatrix.dense(Y, ids), np.array(truth)
