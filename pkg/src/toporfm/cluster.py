"""Lloyd's k-means with k-means++ seeding, and elbow selection of k."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .errors import CardinalityError, DataError

# relative inertia floor before taking logs; an inertia this small counts as a perfect fit
INERTIA_FLOOR = 1e-6
# minimum second difference of log inertia that counts as an elbow
CURVATURE_MIN = 0.5


@dataclass(frozen=True)
class Clustering:
    labels: np.ndarray
    k: int
    inertia: float = 0.0
    centers: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.int64)
        if len(labels) and (labels.min() < 0 or labels.max() >= self.k):
            raise ValueError(f"labels must lie in [0, {self.k})")
        object.__setattr__(self, "labels", labels)

    def __len__(self):
        return len(self.labels)

    @classmethod
    def from_labels(cls, labels) -> "Clustering":
        """Compact arbitrary labels to 0..k-1 in order of first appearance."""
        labels = np.asarray(labels)
        _, first, inv = np.unique(labels, return_index=True, return_inverse=True)
        rank = np.argsort(np.argsort(first))
        return cls(rank[inv.ravel()], len(first))


def within_ss(data: np.ndarray, labels: np.ndarray) -> float:
    total = 0.0
    for c in np.unique(labels):
        pts = data[labels == c]
        total += float(((pts - pts.mean(axis=0)) ** 2).sum())
    return total


def standardize(data: np.ndarray) -> np.ndarray:
    """Zero mean, unit variance per column; constant columns become zeros."""
    data = np.asarray(data, dtype=float)
    sd = data.std(axis=0)
    return (data - data.mean(axis=0)) / np.where(sd > 0, sd, 1.0)


def _kmeanspp(data, k, rng):
    n = len(data)
    centers = [data[rng.integers(n)]]
    d2 = ((data - centers[0]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        idx = rng.choice(n, p=d2 / total) if total > 0 else rng.integers(n)
        centers.append(data[idx])
        d2 = np.minimum(d2, ((data - data[idx]) ** 2).sum(axis=1))
    return np.array(centers)


def _sqdist(data, centers):
    return ((data[:, None, :] - centers[None, :, :]) ** 2).sum(axis=-1)


def _lloyd(data, k, rng, max_iter, tol):
    centers = _kmeanspp(data, k, rng)
    trace = []
    for _ in range(max_iter):
        d2 = _sqdist(data, centers)
        labels = d2.argmin(axis=1)
        labels = _repair_empty(data, labels, centers, k)
        new = np.array([data[labels == c].mean(axis=0) for c in range(k)])
        trace.append(within_ss(data, labels))
        shift = float(((new - centers) ** 2).sum())
        centers = new
        if shift < tol:
            break
    d2 = _sqdist(data, centers)
    labels = _repair_empty(data, d2.argmin(axis=1), centers, k)
    return labels, trace


def _repair_empty(data, labels, centers, k):
    # reseed each empty cluster with the point farthest from its own centroid
    labels = labels.copy()
    for c in range(k):
        if np.any(labels == c):
            continue
        sizes = np.bincount(labels, minlength=k)
        cost = ((data - centers[labels]) ** 2).sum(axis=1)
        cost[sizes[labels] <= 1] = -1.0
        labels[int(np.argmax(cost))] = c
    return labels


def kmeans(data, k: int, seed: int = 0, max_iter: int = 300, tol: float = 1e-10,
           n_init: int = 10) -> Clustering:
    """Best of ``n_init`` seeded k-means++/Lloyd runs, by inertia."""
    data = np.asarray(data, dtype=float)
    if data.ndim == 1:
        data = data[:, None]
    if not np.all(np.isfinite(data)):
        raise DataError("k-means input has non-finite values")
    n = len(data)
    if not 1 <= k <= n:
        raise CardinalityError(f"k={k} must lie in [1, {n}]")
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(max(n_init, 1)):
        labels, _ = _lloyd(data, k, rng, max_iter, tol)
        inertia = within_ss(data, labels)
        if best is None or inertia < best[1] - 1e-12:
            best = (labels, inertia)
    labels, inertia = best
    centers = np.array([data[labels == c].mean(axis=0) for c in range(k)])
    return Clustering(labels, k, inertia, centers)


def inertia_curve(data, ks, seed: int = 0, n_init: int = 10) -> np.ndarray:
    return np.array([kmeans(data, k, seed=seed, n_init=n_init).inertia for k in ks])


def elbow_select(data, k_range, seed: int = 0, n_init: int = 10,
                 min_curvature: float = CURVATURE_MIN) -> int:
    """Pick k at the sharpest bend of the inertia curve.

    The curve is taken on a log scale relative to the first inertia, so a
    bend is judged by proportional rather than absolute drops. The k with the
    largest second difference wins unless that curvature is below
    ``min_curvature``, in which case the curve is considered flat and the
    smallest k is returned. Ranges of one or two values return their first k.
    """
    ks = sorted(int(k) for k in k_range)
    if not ks:
        raise ValueError("empty k_range")
    if len(ks) <= 2:
        return ks[0]
    inertia = inertia_curve(data, ks, seed, n_init)
    if inertia[0] <= 0:
        return ks[0]
    logi = np.log(np.maximum(inertia / inertia[0], INERTIA_FLOOR))
    curvature = logi[:-2] - 2 * logi[1:-1] + logi[2:]
    best = int(np.argmax(curvature))
    if curvature[best] < min_curvature:
        return ks[0]
    return ks[best + 1]


def labels_to_csv(ids, labels) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["object_id", "label"])
    for i, lab in zip(ids, labels):
        w.writerow([i, int(lab)])
    return out.getvalue()
