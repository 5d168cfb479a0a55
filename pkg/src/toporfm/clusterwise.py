"""Clusterwise forecasting: per-cluster models refined by error-driven relabeling,
and a boosted-tree classifier that routes unseen series to a cluster."""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field, replace

import numpy as np
from sklearn.ensemble import GradientBoostingRegressor

from .cluster import Clustering
from .errors import CardinalityError, DataError, DegenerateLabels, FitError, TopoRFMError
from .forecast.theta import theta_fit_matrix
from .forecast.trmf import TRMFHyper, TRMFModel, trmf_fit, trmf_fit_loadings, trmf_forecast
from .ingest import rfm_from_counts
from .series import SeriesMatrix
from .tda import FEATURE_NAMES, series_features

log = logging.getLogger(__name__)

BACKENDS = ("trmf", "theta")


@dataclass(frozen=True)
class ClusterwiseModel:
    """Fitted clusterwise model.

    For the trmf backend ``per_cluster_models[c]`` is a TRMFModel over the
    members of cluster ``c`` whose loadings are refit against the final
    factors, so ``Z @ F`` reproduces ``per_series_error`` exactly. For theta
    it is a tuple of per-member ThetaModels.
    """

    partition: Clustering
    backend: str
    per_cluster_models: tuple
    objective_trace: tuple
    per_series_error: np.ndarray
    hyper: TRMFHyper | None = None
    stop_reason: str = ""
    moves_per_round: tuple = ()
    vetoed: int = 0

    @property
    def k(self) -> int:
        return self.partition.k

    def members(self, cluster: int) -> np.ndarray:
        return np.flatnonzero(self.partition.labels == cluster)


def min_cluster_size(backend: str, hyper: TRMFHyper | None) -> int:
    return max(hyper.d, 2) if backend == "trmf" else 1


# --------------------------------------------------------------------------
# per-cluster fitting and scoring


def _fit_cluster(Y: SeriesMatrix, cols: np.ndarray, backend: str, hyper, seed: int, cluster: int):
    sub = Y.columns(cols)
    try:
        if backend == "theta":
            return tuple(theta_fit_matrix(np.where(sub.observed, sub.values, 0.0)))
        model = trmf_fit(sub, hyper, seed=seed)
        F = trmf_fit_loadings(model, sub.values, sub.observed)
        return replace(model, F=F)
    except TopoRFMError as exc:
        raise FitError(f"cluster {cluster}: {exc}", cluster=cluster) from exc
    except np.linalg.LinAlgError as exc:
        raise FitError(f"cluster {cluster}: {exc}", cluster=cluster) from exc


def _masked_rmse(actual, observed, predicted) -> np.ndarray:
    diff = np.where(observed, actual - predicted, 0.0)
    return np.sqrt((diff ** 2).sum(axis=0) / observed.sum(axis=0))


def _theta_in_sample(models, values) -> np.ndarray:
    return np.stack([m.fitted(values[:, j]) for j, m in enumerate(models)], axis=1)


def _score_trmf(model: TRMFModel, values, observed) -> np.ndarray:
    F = trmf_fit_loadings(model, values, observed)
    return _masked_rmse(values, observed, model.Z @ F)


def _score_theta(values, observed) -> np.ndarray:
    filled = np.where(observed, values, 0.0)
    models = theta_fit_matrix(filled)
    return _masked_rmse(filled, observed, _theta_in_sample(models, filled))


def score_series_under_cluster(model: ClusterwiseModel, cluster: int, y, observed=None) -> float:
    """Training RMSE of series ``y`` under cluster ``cluster``'s frozen model.

    trmf: ridge loadings against the cluster's factors; theta: in-sample
    one-step RMSE of a Theta fit on ``y`` (independent of the cluster).
    """
    if not 0 <= cluster < model.k:
        raise IndexError(f"cluster {cluster} out of range for k={model.k}")
    y = np.asarray(y, dtype=float).reshape(-1, 1)
    obs = np.ones(y.shape, dtype=bool) if observed is None else np.asarray(observed, bool).reshape(-1, 1)
    if model.backend == "theta":
        return float(_score_theta(y, obs)[0])
    return float(_score_trmf(model.per_cluster_models[cluster], y, obs)[0])


def _fit_all(Y, labels, k, backend, hyper, seed):
    models, err = [], np.zeros(Y.n)
    for c in range(k):
        cols = np.flatnonzero(labels == c)
        m = _fit_cluster(Y, cols, backend, hyper, seed + 7919 * c, c)
        models.append(m)
        sub = Y.columns(cols)
        if backend == "theta":
            pred = _theta_in_sample(m, sub.values)
        else:
            pred = m.Z @ m.F
        err[cols] = _masked_rmse(sub.values, sub.observed, pred)
    return tuple(models), err


def _total_error(Y, err) -> float:
    # sum of squared training residuals over all series
    return float((err ** 2 * Y.observed.sum(axis=0)).sum())


def _score_matrix(Y, idx, models, backend) -> np.ndarray:
    """len(idx) x k training RMSE of the given series under every cluster."""
    sub = Y.columns(idx)
    if backend == "theta":
        s = _score_theta(sub.values, sub.observed)
        return np.repeat(s[:, None], len(models), axis=1)
    return np.stack([_score_trmf(m, sub.values, sub.observed) for m in models], axis=1)


def _plan_moves(labels, scores, idx, k, min_size):
    """Batch reassignment with incumbent tie-break and the minimum-size veto."""
    current = labels[idx]
    own = scores[np.arange(len(idx)), current]
    best = scores.argmin(axis=1)
    best = np.where(scores[np.arange(len(idx)), best] < own, best, current)
    movers = np.flatnonzero(best != current)
    gain = own[movers] - scores[movers, best[movers]]
    sizes = np.bincount(labels, minlength=k)
    # apply largest gains first; skip a move that would shrink its source below the minimum
    new = labels.copy()
    vetoed = 0
    for m in movers[np.argsort(-gain, kind="stable")]:
        src, dst = current[m], best[m]
        if sizes[src] - 1 < min_size:
            vetoed += 1
            continue
        sizes[src] -= 1
        sizes[dst] += 1
        new[idx[m]] = dst
    return new, vetoed


def clusterwise_fit(Y: SeriesMatrix, init_labels, backend: str = "trmf",
                    hyper: TRMFHyper | None = None, seed: int = 0, max_rounds: int = 10,
                    tol: float = 1e-6) -> ClusterwiseModel:
    """Alternate per-cluster fits and error-driven reassignment.

    Each round fits the backend on every cluster's columns, scores every
    series whose training RMSE exceeds its cluster's mean under all clusters,
    and moves it to the lowest-error cluster (all moves at once). A round
    whose refit does not lower the total squared training error is undone,
    which keeps ``objective_trace`` non-increasing.
    """
    if backend not in BACKENDS:
        raise ValueError(f"backend must be one of {BACKENDS}")
    if backend == "trmf" and hyper is None:
        hyper = TRMFHyper()
    part = init_labels if isinstance(init_labels, Clustering) else Clustering.from_labels(init_labels)
    if len(part) != Y.n:
        raise DataError(f"{len(part)} labels for {Y.n} series")
    k = part.k
    labels = part.labels.copy()
    min_size = min_cluster_size(backend, hyper)
    sizes = np.bincount(labels, minlength=k)
    if sizes.min() < min_size:
        raise CardinalityError(
            f"cluster {int(sizes.argmin())} has {sizes.min()} series, minimum is {min_size}")
    if max_rounds < 1:
        raise ValueError("max_rounds must be >= 1")

    models, err = _fit_all(Y, labels, k, backend, hyper, seed)
    trace = [_total_error(Y, err)]
    moves, vetoed_total = [], 0
    stop = "max_rounds"
    for _ in range(max_rounds):
        offenders = np.zeros(Y.n, dtype=bool)
        for c in range(k):
            cols = labels == c
            offenders |= cols & (err > err[cols].mean())
        idx = np.flatnonzero(offenders)
        if backend == "theta" or k == 1 or not len(idx):
            moves.append(0)
            stop = "converged"
            break
        scores = _score_matrix(Y, idx, models, backend)
        new_labels, vetoed = _plan_moves(labels, scores, idx, k, min_size)
        vetoed_total += vetoed
        if vetoed:
            log.info("clusterwise: %d moves vetoed by the minimum cluster size", vetoed)
        n_moved = int((new_labels != labels).sum())
        moves.append(n_moved)
        if n_moved == 0:
            stop = "converged"
            break
        new_models, new_err = _fit_all(Y, new_labels, k, backend, hyper, seed)
        total = _total_error(Y, new_err)
        if total > trace[-1]:
            stop = "no_improvement"
            break
        improvement = trace[-1] - total
        labels, models, err = new_labels, new_models, new_err
        trace.append(total)
        if improvement < tol * max(trace[-2], 1e-300):
            stop = "tol"
            break
    return ClusterwiseModel(Clustering(labels, k), backend, models, tuple(trace), err,
                            hyper, stop, tuple(moves), vetoed_total)


# --------------------------------------------------------------------------
# classifier features


SUMMARY_NAMES = ("mean", "variance", "zero_fraction", "last", "trend_slope")
RFM_RANK_NAMES = ("r_rank", "f_rank", "m_rank")


@dataclass(frozen=True)
class FeatureRecipe:
    """How series are turned into classifier features.

    RFM ranks are quintiles of the final recency/frequency/monetary values
    relative to the training population, so a series gets the same ranks
    whatever batch it arrives in.
    """

    window: int = 4
    stride: int = 1
    reference_rfm: np.ndarray | None = field(default=None, compare=False)  # n_train x 3

    @property
    def names(self) -> tuple:
        return tuple(FEATURE_NAMES) + SUMMARY_NAMES + RFM_RANK_NAMES

    def fit(self, Y: SeriesMatrix) -> "FeatureRecipe":
        return replace(self, reference_rfm=_final_rfm(Y))

    def transform(self, Y: SeriesMatrix) -> np.ndarray:
        if self.reference_rfm is None:
            raise ValueError("recipe not fitted")
        vals = np.where(Y.observed, Y.values, 0.0)
        topo = np.stack([series_features(vals[:, j], self.window, self.stride) for j in range(Y.n)])
        return np.hstack([topo, _summary_stats(vals), self._rfm_ranks(_final_rfm(Y))])

    def _rfm_ranks(self, final: np.ndarray) -> np.ndarray:
        ref = self.reference_rfm
        n = len(ref)
        out = np.empty(final.shape)
        # recency: lower is better, so rank by negated value
        signs = (-1.0, 1.0, 1.0)
        for j, sgn in enumerate(signs):
            pool = np.sort(sgn * ref[:, j])
            below = np.searchsorted(pool, sgn * final[:, j], side="left")
            out[:, j] = np.minimum(below * 5 // n + 1, 5)
        return out


def _final_rfm(Y: SeriesMatrix) -> np.ndarray:
    vals = np.where(Y.observed, Y.values, 0.0)
    counts = (vals != 0).astype(float)
    r, f, m = rfm_from_counts(counts, vals)
    return np.stack([r[-1], f[-1], m.sum(axis=0)], axis=1)


def _summary_stats(vals: np.ndarray) -> np.ndarray:
    T = vals.shape[0]
    t = np.arange(T) - (T - 1) / 2
    slope = t @ vals / (t @ t) if T > 1 else np.zeros(vals.shape[1])
    return np.stack([vals.mean(axis=0), vals.var(axis=0), (vals == 0).mean(axis=0),
                     vals[-1], slope], axis=1)


def series_feature_matrix(Y: SeriesMatrix, recipe: FeatureRecipe) -> np.ndarray:
    return recipe.transform(Y)


# --------------------------------------------------------------------------
# classifier


@dataclass(frozen=True)
class LabelClassifier:
    """One-vs-rest boosted regression trees on class indicators."""

    classes: np.ndarray
    estimators: tuple
    rounds: int
    learning_rate: float
    max_depth: int
    recipe: FeatureRecipe | None = None
    training_accuracy: float = float("nan")

    def decision_function(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        return np.stack([e.predict(X) for e in self.estimators], axis=1)

    def predict(self, X) -> np.ndarray:
        return self.classes[self.decision_function(X).argmax(axis=1)]


def train_label_classifier(features, labels, rounds: int = 200, depth: int = 3,
                           rate: float = 0.1, seed: int = 0,
                           recipe: FeatureRecipe | None = None) -> LabelClassifier:
    """Fit one squared-loss gradient-boosted tree ensemble per class.

    Each ensemble starts from the class prior (its mean indicator), so a
    model that cannot split predicts the majority class everywhere.
    """
    X = np.asarray(features, dtype=float)
    y = labels.labels if isinstance(labels, Clustering) else np.asarray(labels)
    if not np.all(np.isfinite(X)):
        raise DataError("non-finite classifier features")
    if len(X) != len(y):
        raise DataError(f"{len(X)} feature rows for {len(y)} labels")
    classes = np.unique(y)
    if len(classes) < 2:
        raise DegenerateLabels("classifier needs at least two classes")
    if len(X) < 10:
        raise DataError(f"classifier needs at least 10 series, got {len(X)}")
    est = []
    for c in classes:
        g = GradientBoostingRegressor(loss="squared_error", n_estimators=rounds,
                                      learning_rate=rate, max_depth=depth, random_state=seed)
        g.fit(X, (y == c).astype(float))
        est.append(g)
    clf = LabelClassifier(classes, tuple(est), rounds, rate, depth, recipe)
    acc = float((clf.predict(X) == y).mean())
    return replace(clf, training_accuracy=acc)


# --------------------------------------------------------------------------
# out-of-sample assignment


def forecast_members(model: ClusterwiseModel, labels: np.ndarray, Y: SeriesMatrix, h: int) -> np.ndarray:
    """h x n forecasts of series already assigned to clusters."""
    out = np.zeros((max(h, 0), Y.n))
    if h <= 0:
        return out
    for c in range(model.k):
        cols = np.flatnonzero(labels == c)
        if not len(cols):
            continue
        sub = Y.columns(cols)
        if model.backend == "theta":
            fits = theta_fit_matrix(sub.values)
            out[:, cols] = np.stack([m.forecast(h) for m in fits], axis=1)
        else:
            m = model.per_cluster_models[c]
            F = trmf_fit_loadings(m, sub.values, sub.observed)
            out[:, cols] = trmf_forecast(m, h, F)
    return out


def assign_labels(model: ClusterwiseModel, clf: LabelClassifier | None, new_series: SeriesMatrix):
    """Predicted cluster and winning class score for each new series."""
    if model.k == 1:
        return np.zeros(new_series.n, dtype=np.int64), np.ones(new_series.n)
    dec = clf.decision_function(clf.recipe.transform(new_series))
    return clf.classes[dec.argmax(axis=1)], dec.max(axis=1)


def assign_and_forecast(model: ClusterwiseModel, clf: LabelClassifier | None,
                        new_series: SeriesMatrix, h: int):
    """Predict each new series' cluster and forecast it with that cluster's model.

    ``new_series`` holds the training portion on the same period grid as the
    clusterwise fit. Returns ``(labels, forecasts)``, forecasts h x n_new.
    """
    if model.backend == "trmf" and new_series.T != model.per_cluster_models[0].T:
        raise DataError(f"new series have {new_series.T} periods, model has "
                        f"{model.per_cluster_models[0].T}")
    labels, _ = assign_labels(model, clf, new_series)
    return labels, forecast_members(model, labels, new_series, h)


def assignments_to_csv(ids, labels, scores) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["user_id", "predicted_label", "score"])
    for i, lab, s in zip(ids, labels, scores):
        w.writerow([i, int(lab), repr(float(s))])
    return out.getvalue()


__all__ = [
    "ClusterwiseModel", "FeatureRecipe", "LabelClassifier", "assign_and_forecast", "assign_labels",
    "assignments_to_csv", "clusterwise_fit", "forecast_members", "min_cluster_size",
    "score_series_under_cluster", "series_feature_matrix", "train_label_classifier",
]
