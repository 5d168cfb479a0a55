"""Consensus clustering: GMM on relabel-voting rows or on co-association rows."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.special import logsumexp

from .cluster import Clustering, _kmeanspp
from .errors import CardinalityError, DataError

FULL_COVARIANCE_MAX_DIM = 200


@dataclass(frozen=True)
class EnsembleInput:
    clusterings: tuple

    def __post_init__(self):
        cl = tuple(c if isinstance(c, Clustering) else Clustering.from_labels(c)
                   for c in self.clusterings)
        if len(cl) < 2:
            raise ValueError("an ensemble needs at least two base clusterings")
        if len({len(c) for c in cl}) != 1:
            raise ValueError("base clusterings cover different numbers of objects")
        object.__setattr__(self, "clusterings", cl)

    @property
    def M(self) -> int:
        return len(self.clusterings)

    @property
    def N(self) -> int:
        return len(self.clusterings[0])

    @property
    def k(self) -> int:
        """Size of the shared label space (largest base k)."""
        return max(c.k for c in self.clusterings)


def contingency(ref: np.ndarray, other: np.ndarray, k: int) -> np.ndarray:
    """k x k co-occurrence counts: rows label ``ref``, columns label ``other``."""
    omega = np.zeros((k, k), dtype=np.int64)
    np.add.at(omega, (ref, other), 1)
    return omega


def best_correspondence(omega: np.ndarray) -> np.ndarray:
    """Label map ``other -> ref`` maximizing the matched co-occurrence count.

    Among equally heavy matchings the one whose map, read in order of the
    ``other`` labels, is lexicographically largest is returned, so ties are
    resolved identically on every run.
    """
    k = omega.shape[0]
    w = omega.T  # rows: other labels, cols: reference labels

    def best_weight(rows, cols):
        if not rows:
            return 0
        sub = w[np.ix_(rows, cols)]
        r, c = linear_sum_assignment(sub, maximize=True)
        return int(sub[r, c].sum())

    target = best_weight(list(range(k)), list(range(k)))
    mapping = np.full(k, -1, dtype=np.int64)
    free = list(range(k))
    gained = 0
    for lp in range(k):
        rest_rows = list(range(lp + 1, k))
        for l in sorted(free, reverse=True):
            cols = [c for c in free if c != l]
            if gained + w[lp, l] + best_weight(rest_rows, cols) == target:
                mapping[lp] = l
                gained += int(w[lp, l])
                free.remove(l)
                break
    return mapping


def matching_weight(omega: np.ndarray, mapping: np.ndarray) -> int:
    return int(sum(omega[mapping[lp], lp] for lp in range(len(mapping))))


def relabel(ens: EnsembleInput, reference_index: int = 0) -> EnsembleInput:
    """Align every clustering's labels to the reference clustering's labels.

    Clusterings with fewer labels are padded with empty labels, so the shared
    label space has ``ens.k`` entries.
    """
    if not 0 <= reference_index < ens.M:
        raise IndexError(f"reference_index {reference_index} out of range for M={ens.M}")
    k = ens.k
    ref = ens.clusterings[reference_index].labels
    out = []
    for g, c in enumerate(ens.clusterings):
        if g == reference_index:
            out.append(Clustering(c.labels, k, c.inertia))
            continue
        mapping = best_correspondence(contingency(ref, c.labels, k))
        out.append(Clustering(mapping[c.labels], k, c.inertia))
    return EnsembleInput(tuple(out))


def voting_matrix(relabeled: EnsembleInput) -> np.ndarray:
    """N x k vote counts; each row sums to M."""
    rv = np.zeros((relabeled.N, relabeled.k), dtype=np.int64)
    rows = np.arange(relabeled.N)
    for c in relabeled.clusterings:
        np.add.at(rv, (rows, c.labels), 1)
    return rv


def coassociation(ens: EnsembleInput) -> np.ndarray:
    """N x N counts of base clusterings placing both objects together."""
    co = np.zeros((ens.N, ens.N), dtype=np.int64)
    for c in ens.clusterings:
        co += c.labels[:, None] == c.labels[None, :]
    return co


# --------------------------------------------------------------------------
# Gaussian mixture


@dataclass(frozen=True)
class GMMModel:
    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray  # (k, m, m) full or (k, m) diagonal
    covariance_type: str
    floor: float
    log_likelihood: tuple = field(default=())

    @property
    def k_max(self) -> int:
        return len(self.weights)

    def _log_joint(self, X):
        return _log_joint(X, self.weights, self.means, self.covariances,
                          self.covariance_type, self.floor)

    def predict_proba(self, X) -> np.ndarray:
        lj = self._log_joint(np.asarray(X, dtype=float))
        return np.exp(lj - logsumexp(lj, axis=1, keepdims=True))

    def predict(self, X) -> np.ndarray:
        return self.predict_proba(X).argmax(axis=1)


def _log_joint(X, weights, means, covs, cov_type, floor):
    """log(weight_k) + log N(x | mu_k, Sigma_k) - floor/2 * tr(Sigma_k^-1).

    The trace term is the penalty whose exact maximizer is the floored
    covariance, which keeps EM monotone in the penalized log-likelihood.
    """
    n, m = X.shape
    out = np.empty((n, len(weights)))
    with np.errstate(divide="ignore"):
        logw = np.log(weights)
    for k in range(len(weights)):
        diff = X - means[k]
        if cov_type == "full":
            L = np.linalg.cholesky(covs[k])
            sol = np.linalg.solve(L, diff.T)
            maha = (sol * sol).sum(axis=0)
            logdet = 2.0 * np.log(np.diag(L)).sum()
            Linv = np.linalg.solve(L, np.eye(m))
            trace_inv = float((Linv * Linv).sum())
        else:
            var = covs[k]
            maha = (diff * diff / var).sum(axis=1)
            logdet = float(np.log(var).sum())
            trace_inv = float((1.0 / var).sum())
        out[:, k] = logw[k] - 0.5 * (m * np.log(2 * np.pi) + logdet + maha) - 0.5 * floor * trace_inv
    return out


def gmm_fit(data, k_max: int, seed: int = 0, max_iter: int = 200, tol: float = 1e-8,
            covariance_type: str | None = None, floor: float | None = None) -> GMMModel:
    """Fit a k_max-component Gaussian mixture by EM.

    Means start at k-means++ picks, covariances at the sample covariance,
    weights uniform. Every M-step adds ``floor`` to the covariance diagonals
    (default: 1e-6 times the mean feature variance). Iteration stops when
    the per-step gain in penalized log-likelihood drops below
    ``tol * max(1, |loglik|)``.
    """
    X = np.asarray(data, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if not np.all(np.isfinite(X)):
        raise DataError("GMM input has non-finite values")
    n, m = X.shape
    if not 1 <= k_max <= n:
        raise CardinalityError(f"k_max={k_max} must lie in [1, {n}]")
    if covariance_type is None:
        covariance_type = "full" if m <= FULL_COVARIANCE_MAX_DIM else "diag"
    if floor is None:
        mean_var = float(X.var(axis=0).mean())
        floor = 1e-6 * mean_var if mean_var > 0 else 1e-6

    rng = np.random.default_rng(seed)
    means = _kmeanspp(X, k_max, rng).astype(float)
    weights = np.full(k_max, 1.0 / k_max)
    if covariance_type == "full":
        base = np.atleast_2d(np.cov(X, rowvar=False, bias=True)) + floor * np.eye(m)
        covs = np.repeat(base[None], k_max, axis=0)
    else:
        covs = np.repeat((X.var(axis=0) + floor)[None], k_max, axis=0)

    trace = []
    for _ in range(max_iter):
        lj = _log_joint(X, weights, means, covs, covariance_type, floor)
        norm = logsumexp(lj, axis=1, keepdims=True)
        trace.append(float(norm.sum()))
        if len(trace) > 1 and trace[-1] - trace[-2] < tol * max(1.0, abs(trace[-1])):
            break
        resp = np.exp(lj - norm)
        nk = resp.sum(axis=0)
        weights = nk / n
        for k in range(k_max):
            if nk[k] <= 1e-12:
                continue  # dead component: weight 0, parameters frozen
            means[k] = resp[:, k] @ X / nk[k]
            diff = X - means[k]
            if covariance_type == "full":
                covs[k] = (resp[:, k, None] * diff).T @ diff / nk[k] + floor * np.eye(m)
                covs[k] = 0.5 * (covs[k] + covs[k].T)
            else:
                covs[k] = resp[:, k] @ (diff * diff) / nk[k] + floor
    return GMMModel(weights, means, covs, covariance_type, floor, tuple(trace))


@dataclass(frozen=True)
class Consensus(Clustering):
    posterior_max: np.ndarray | None = field(default=None, compare=False)
    model: GMMModel | None = field(default=None, compare=False)


def _gmm_consensus(X, k_max, seed, n_init, covariance_type=None) -> Consensus:
    k_max = min(k_max, len(X))
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(max(n_init, 1)):
        model = gmm_fit(X, k_max, seed=int(rng.integers(2**31)), covariance_type=covariance_type)
        if best is None or model.log_likelihood[-1] > best.log_likelihood[-1]:
            best = model
    post = best.predict_proba(X)
    compact = Clustering.from_labels(post.argmax(axis=1))
    return Consensus(compact.labels, compact.k, 0.0, None, post.max(axis=1), best)


def gmm_voting(ens: EnsembleInput, k_max: int, seed: int = 0, reference_index: int = 0,
               n_init: int = 10) -> Consensus:
    """Relabel, count votes, fit a GMM on the vote rows, assign by max posterior."""
    rv = voting_matrix(relabel(ens, reference_index)).astype(float)
    return _gmm_consensus(rv, k_max, seed, n_init)


def gmm_pair(ens: EnsembleInput, k_max: int, seed: int = 0, n_init: int = 10) -> Consensus:
    """Fit a GMM on co-association rows, assign by max posterior."""
    co = coassociation(ens).astype(float)
    return _gmm_consensus(co, k_max, seed, n_init)


def consensus_to_csv(ids, consensus: Consensus) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["object_id", "label", "posterior_max"])
    post = consensus.posterior_max if consensus.posterior_max is not None else np.ones(len(consensus))
    for i, lab, p in zip(ids, consensus.labels, post):
        w.writerow([i, int(lab), repr(float(p))])
    return out.getvalue()
