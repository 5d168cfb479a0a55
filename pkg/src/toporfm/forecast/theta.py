"""Theta(0, 2) forecasting: linear trend line averaged with SES of the theta=2 line."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import InsufficientHistory

ALPHA_GRID = np.round(np.arange(1, 100) / 100.0, 2)


@dataclass(frozen=True)
class ThetaModel:
    level: float          # intercept of the least-squares line at t = 0
    trend_slope: float
    alpha: float
    ses_level: float      # smoothed theta=2 line after the last observation
    n_obs: int

    def forecast(self, h: int) -> np.ndarray:
        steps = np.arange(1, max(h, 0) + 1)
        line = self.level + self.trend_slope * (self.n_obs - 1 + steps)
        return 0.5 * line + 0.5 * self.ses_level

    def fitted(self, series) -> np.ndarray:
        """One-step-ahead in-sample predictions (first period uses the line only)."""
        y = np.asarray(series, dtype=float)
        t = np.arange(len(y))
        line = self.level + self.trend_slope * t
        theta2 = 2.0 * y - line
        level = np.empty(len(y))
        level[0] = theta2[0]
        for i in range(1, len(y)):
            level[i] = self.alpha * theta2[i] + (1 - self.alpha) * level[i - 1]
        prev = np.concatenate([[theta2[0]], level[:-1]])
        return 0.5 * line + 0.5 * prev


def theta_fit_matrix(Y: np.ndarray) -> list[ThetaModel]:
    """Fit one Theta model per column of a T x n matrix (vectorized over columns)."""
    Y = np.asarray(Y, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    T, n = Y.shape
    if T < 3:
        raise InsufficientHistory(f"theta needs at least 3 observations, got {T}")
    t = np.arange(T, dtype=float)
    tc = t - t.mean()
    slope = tc @ (Y - Y.mean(axis=0)) / (tc @ tc)
    intercept = Y.mean(axis=0) - slope * t.mean()
    theta2 = 2.0 * Y - (intercept[None, :] + slope[None, :] * t[:, None])

    a = ALPHA_GRID[:, None]  # grid x 1, broadcast over columns
    level = np.repeat(theta2[0][None, :], len(ALPHA_GRID), axis=0)
    sse = np.zeros_like(level)
    for i in range(1, T):
        err = theta2[i][None, :] - level
        sse += err * err
        level = level + a * err
    best = np.argmin(sse, axis=0)
    cols = np.arange(n)
    return [ThetaModel(float(intercept[j]), float(slope[j]), float(ALPHA_GRID[best[j]]),
                       float(level[best[j], j]), T) for j in cols]


def theta_fit(series) -> ThetaModel:
    y = np.asarray(series, dtype=float).ravel()
    return theta_fit_matrix(y[:, None])[0]


def theta_forecast(series, h: int) -> np.ndarray:
    """Length-h Theta(0, 2) forecast of ``series``."""
    return theta_fit(series).forecast(h)


def theta_forecast_matrix(Y: np.ndarray, h: int) -> np.ndarray:
    """h x n forecasts, one Theta model per column."""
    models = theta_fit_matrix(Y)
    if h <= 0:
        return np.zeros((0, len(models)))
    return np.stack([m.forecast(h) for m in models], axis=1)
