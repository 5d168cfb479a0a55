"""End-to-end experiment: topological RFM clusters, consensus, clusterwise
forecasting of unlabeled batches, and global baselines, reported as mean RMSE."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import os
import platform
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import __version__
from ._io import write_atomic
from .cluster import CURVATURE_MIN, Clustering, elbow_select, kmeans, labels_to_csv, standardize
from .clusterwise import (
    FeatureRecipe,
    assign_labels,
    assignments_to_csv,
    clusterwise_fit,
    forecast_members,
    min_cluster_size,
    train_label_classifier,
)
from .ensemble import EnsembleInput, consensus_to_csv, gmm_pair, gmm_voting
from .errors import CardinalityError, ConfigError, DataError, TopoRFMError
from .forecast.metrics import column_rmse
from .forecast.theta import theta_forecast_matrix
from .forecast.trmf import TRMFHyper, trmf_fit, trmf_fit_loadings, trmf_forecast
from .ingest import PeriodGrid, RFMSeries, aggregate_demand, read_event_log, rfm_from_counts
from .series import SeriesMatrix
from .synth import cloud_event_log
from .tda import delay_embed, diagram_to_csv, rips_persistence, series_features

log = logging.getLogger(__name__)

MODELS = ("trmf", "theta")
METHODS = ("all-data", "gmm_vote", "gmm_pair")
RFM_DIMENSIONS = ("recency", "frequency", "monetary")
FULL_POOL = 2000
FULL_BATCHES = (600, 3000, 7000)


# --------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class DatasetConfig:
    name: str = "synthetic"
    path: str | None = None
    format: str = "cdnow"
    value: str = "quantity"
    synthetic_seed: int = 0
    synthetic_users: int = 60
    synthetic_weeks: int = 104


@dataclass(frozen=True)
class TDAConfig:
    window: int = 4
    stride: int = 1


@dataclass(frozen=True)
class ClusterConfig:
    k_min: int = 2
    k_max: int = 4
    n_init: int = 10
    min_curvature: float = CURVATURE_MIN

    @property
    def k_range(self) -> range:
        return range(self.k_min, self.k_max + 1)


@dataclass(frozen=True)
class EnsembleConfig:
    k_max: int = 0  # 0: largest base-clustering k
    n_init: int = 10


@dataclass(frozen=True)
class ClusterwiseConfig:
    max_rounds: int = 10
    tol: float = 1e-6


@dataclass(frozen=True)
class ClassifierConfig:
    rounds: int = 200
    depth: int = 3
    rate: float = 0.1


@dataclass(frozen=True)
class SplitConfig:
    train_fraction: float = 0.7       # temporal share of each series used for fitting
    clusterwise_fraction: float = 0.7  # share of the pool used for clusterwise fitting
    pool_size: int = FULL_POOL
    batches: tuple = FULL_BATCHES
    scale: float = 0.2                # desk-scale shrink of pool and batches


@dataclass(frozen=True)
class PipelineConfig:
    dataset: DatasetConfig = DatasetConfig()
    period_length: int = 7
    tda: TDAConfig = TDAConfig()
    cluster: ClusterConfig = ClusterConfig()
    ensemble: EnsembleConfig = EnsembleConfig()
    clusterwise: ClusterwiseConfig = ClusterwiseConfig()
    classifier: ClassifierConfig = ClassifierConfig()
    trmf: TRMFHyper = TRMFHyper()
    split: SplitConfig = SplitConfig()
    models: tuple = MODELS
    methods: tuple = METHODS
    seed: int = 0
    n_jobs: int = 0  # 0: all available cores
    dry_run: bool = False
    output_dir: str | None = None

    def __post_init__(self):
        s = self.split
        for name in ("train_fraction", "clusterwise_fraction"):
            if not 0 < getattr(s, name) < 1:
                raise ConfigError(f"split.{name} must lie in (0, 1)")
        if s.pool_size < 1 or not s.batches or min(s.batches) < 1 or s.scale <= 0:
            raise ConfigError("pool size, batch sizes and scale must be positive")
        bad = set(self.models) - set(MODELS)
        if bad:
            raise ConfigError(f"unknown models {sorted(bad)}")
        bad = set(self.methods) - set(METHODS)
        if bad:
            raise ConfigError(f"unknown methods {sorted(bad)}")
        if self.period_length < 1:
            raise ConfigError("period_length must be >= 1")

    def to_dict(self) -> dict:
        return _jsonable(asdict(self))

    def config_hash(self) -> str:
        d = self.to_dict()
        d.pop("output_dir", None)
        d.pop("n_jobs", None)
        blob = json.dumps(d, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


# --------------------------------------------------------------------------
# report


REPORT_COLUMNS = ("Dataset", "Model", "Method", "Batch", "RMSE", "seed", "n_eval", "status",
                  "config_hash")


@dataclass(frozen=True)
class ReportRow:
    dataset: str
    model: str
    method: str
    batch: int
    mean_rmse: float
    seed: int
    n_eval: int
    status: str = "ok"
    config_hash: str = ""
    runtime: float = field(default=0.0, compare=False)

    def csv_fields(self) -> list:
        return [self.dataset, "MF" if self.model == "trmf" else "Theta", self.method,
                self.batch, repr(float(self.mean_rmse)), self.seed, self.n_eval, self.status,
                self.config_hash]


@dataclass(frozen=True)
class Report:
    rows: tuple = ()
    provenance: dict = field(default_factory=dict, compare=False)

    def __len__(self):
        return len(self.rows)

    def to_csv(self) -> str:
        """Deterministic columns only; runtimes live in the JSON sidecar."""
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for r in self.rows:
            w.writerow(r.csv_fields())
        return out.getvalue()

    def to_json(self) -> str:
        rows = [asdict(r) for r in self.rows]
        return json.dumps({"rows": rows, "provenance": self.provenance}, indent=2, sort_keys=True,
                          default=str)

    def row(self, model: str, method: str, batch: int | None = None) -> ReportRow:
        for r in self.rows:
            if r.model == model and r.method == method and (batch is None or r.batch == batch):
                return r
        raise KeyError((model, method, batch))


def provenance(cfg: PipelineConfig) -> dict:
    import scipy
    import sklearn

    return {
        "config_hash": cfg.config_hash(),
        "config": cfg.to_dict(),
        "versions": {"toporfm": __version__, "python": platform.python_version(),
                     "numpy": np.__version__, "scipy": scipy.__version__,
                     "scikit-learn": sklearn.__version__},
    }


# --------------------------------------------------------------------------
# data


@dataclass(frozen=True)
class Dataset:
    name: str
    demand: SeriesMatrix  # T x N, fully observed
    grid: PeriodGrid


def load_dataset(cfg: PipelineConfig) -> Dataset:
    ds = cfg.dataset
    if ds.path:
        if not os.path.exists(ds.path):
            raise DataError(f"dataset not found: {ds.path}")
        ev = read_event_log(ds.path, ds.format)
    else:
        ev = cloud_event_log(ds.synthetic_users, ds.synthetic_weeks, seed=ds.synthetic_seed)
    grid = PeriodGrid.covering(ev, cfg.period_length)
    return Dataset(ds.name, aggregate_demand(ev, grid, ds.value), grid)


# --------------------------------------------------------------------------
# splits


@dataclass(frozen=True)
class SplitPlan:
    clusterwise: tuple   # column indices
    classifier_test: tuple
    batches: dict        # batch size -> column indices (nested prefixes)
    cut: int             # first evaluation period
    T: int
    scale: float
    pool_size: int

    def manifest(self, ids) -> dict:
        name = lambda idx: [str(ids[i]) for i in idx]  # noqa: E731
        return {
            "scale": self.scale,
            "pool_size": self.pool_size,
            "clusterwise_size": len(self.clusterwise),
            "classifier_test_size": len(self.classifier_test),
            "batch_sizes": sorted(self.batches),
            "temporal": {"T": self.T, "train_periods": [0, self.cut],
                         "eval_periods": [self.cut, self.T]},
            "clusterwise": name(self.clusterwise),
            "classifier_test": name(self.classifier_test),
            "batches": {str(b): name(idx) for b, idx in sorted(self.batches.items())},
        }


def plan_splits(n_series: int, T: int, cfg: PipelineConfig) -> SplitPlan:
    """Seeded pool / batch sampling and the shared temporal cut.

    The pool and batches are ``scale`` times the configured sizes; if the
    data has fewer series than pool plus the largest batch, all sizes shrink
    by the same factor.
    """
    s = cfg.split
    scale = s.scale
    need = s.pool_size + max(s.batches)
    if need * scale > n_series:
        scale = n_series / need
        log.info("dataset has %d series; sizes scaled by %.4f", n_series, scale)
    pool = int(round(s.pool_size * scale))
    batches = sorted({int(round(b * scale)) for b in s.batches})
    if pool < 10 * cfg.cluster.k_max:
        raise ConfigError(f"pool of {pool} series is smaller than 10 x k_max = {10 * cfg.cluster.k_max}")
    if min(batches) < 1:
        raise ConfigError("a batch scaled to zero series")
    n_cw = int(round(s.clusterwise_fraction * pool))
    perm = np.random.default_rng(cfg.seed).permutation(n_series)
    rest = perm[pool:]
    cut = min(max(int(round(s.train_fraction * T)), 1), T - 1)
    return SplitPlan(tuple(perm[:n_cw]), tuple(perm[n_cw:pool]),
                     {b: tuple(rest[:b]) for b in batches}, cut, T, scale, pool)


# --------------------------------------------------------------------------
# topological RFM

_FEATURE_CACHE: dict = {}


def _cached_features(series: np.ndarray, window: int, stride: int) -> np.ndarray:
    key = (series.tobytes(), window, stride)
    hit = _FEATURE_CACHE.get(key)
    if hit is None:
        hit = series_features(series, window, stride)
        if len(_FEATURE_CACHE) < 200_000:
            _FEATURE_CACHE[key] = hit
    return hit


def _workers(n_jobs: int) -> int:
    return n_jobs if n_jobs > 0 else (os.cpu_count() or 1)


def feature_matrix(series_list, tda: TDAConfig, n_jobs: int = 1) -> np.ndarray:
    """N x 10 barcode features, one row per series."""
    fn = lambda x: _cached_features(np.ascontiguousarray(x, dtype=float), tda.window, tda.stride)  # noqa: E731
    workers = _workers(n_jobs)
    if workers > 1 and len(series_list) > 1:
        with ThreadPoolExecutor(workers) as pool:
            rows = list(pool.map(fn, series_list))
    else:
        rows = [fn(x) for x in series_list]
    return np.stack(rows)


def rfm_users(Y: SeriesMatrix) -> list[RFMSeries]:
    """RFM series for every column; a period with nonzero demand is one event."""
    vals = np.where(Y.observed, Y.values, 0.0)
    r, f, m = rfm_from_counts((vals != 0).astype(float), vals)
    return [RFMSeries(str(u), r[:, j], f[:, j], m[:, j]) for j, u in enumerate(Y.ids)]


def topological_rfm_clusters(users, cfg: PipelineConfig = PipelineConfig(),
                             seed: int | None = None) -> EnsembleInput:
    """One k-means clustering per RFM dimension on standardized barcode features.

    k is picked per dimension by the elbow rule over ``cfg.cluster.k_range``,
    capped at the number of distinct feature rows (so identical users form a
    single cluster).
    """
    users = list(users)
    if len(users) < 10:
        raise CardinalityError(f"topological RFM needs at least 10 users, got {len(users)}")
    seed = cfg.seed if seed is None else seed
    out = []
    for dim in RFM_DIMENSIONS:
        X = standardize(feature_matrix([getattr(u, dim) for u in users], cfg.tda, cfg.n_jobs))
        # no more clusters than distinct feature rows
        k_hi = min(cfg.cluster.k_max, len(np.unique(X, axis=0)))
        ks = range(min(cfg.cluster.k_min, k_hi), k_hi + 1)
        k = elbow_select(X, ks, seed=seed, n_init=cfg.cluster.n_init,
                         min_curvature=cfg.cluster.min_curvature)
        out.append(kmeans(X, k, seed=seed, n_init=cfg.cluster.n_init))
    return EnsembleInput(tuple(out))


def consensus_labels(ens: EnsembleInput, method: str, cfg: PipelineConfig, seed: int):
    k_max = cfg.ensemble.k_max or ens.k
    if method == "gmm_vote":
        return gmm_voting(ens, k_max, seed=seed, n_init=cfg.ensemble.n_init)
    return gmm_pair(ens, k_max, seed=seed, n_init=cfg.ensemble.n_init)


def merge_small_clusters(labels: np.ndarray, min_size: int) -> Clustering:
    """Fold clusters below ``min_size`` into the largest cluster."""
    labels = np.asarray(labels)
    sizes = np.bincount(labels)
    largest = int(np.argmax(sizes))
    small = np.flatnonzero((sizes > 0) & (sizes < min_size))
    merged = np.where(np.isin(labels, small), largest, labels)
    return Clustering.from_labels(merged)


# --------------------------------------------------------------------------
# pipeline


def _global_forecasts(model: str, Y_fit: SeriesMatrix, eval_cols, h, cfg, seed):
    """Forecasts of ``eval_cols`` from one model fit on every column of ``Y_fit``."""
    if model == "theta":
        return theta_forecast_matrix(Y_fit.values[:, eval_cols], h)
    m = trmf_fit(Y_fit, cfg.trmf, seed=seed)
    sub = Y_fit.columns(eval_cols)
    return trmf_forecast(m, h, trmf_fit_loadings(m, sub.values, sub.observed))


def _assert_no_leak(train: SeriesMatrix, test: SeriesMatrix, plan: SplitPlan):
    assert train.T == plan.cut and test.T == plan.T - plan.cut, "temporal split sizes"
    train_periods = np.arange(plan.cut)
    eval_periods = np.arange(plan.cut, plan.T)
    assert train_periods.max() < eval_periods.min(), "evaluation period precedes training period"


def run_pipeline(cfg: PipelineConfig, data: Dataset | None = None) -> Report:
    """Run every (model, method) setting of ``cfg`` for each batch size.

    Clusterwise methods produce one row per batch; the all-data baseline
    fits once on the pool plus the largest batch and is evaluated on that
    batch. Artifacts are written under ``cfg.output_dir`` when set.
    """
    data = data or load_dataset(cfg)
    Y = data.demand
    plan = plan_splits(Y.n, Y.T, cfg)
    chash = cfg.config_hash()
    out_dir = cfg.output_dir
    artifacts: dict[str, str] = {"splits.json": json.dumps(plan.manifest(Y.ids), indent=1)}
    prov = provenance(cfg)
    prov["scale"] = plan.scale
    prov["timings"] = {}

    if cfg.dry_run:
        _write_artifacts(out_dir, artifacts)
        report = Report((), prov)
        _write_report(out_dir, report)
        return report

    train, test = Y.rows(0, plan.cut), Y.rows(plan.cut, Y.T)
    _assert_no_leak(train, test, plan)
    h = test.T
    largest = max(plan.batches)
    rows: list[ReportRow] = []
    per_series: list[list] = []
    forecasts_out: list[list] = []
    label_rows: list[list] = []

    def record(model, method, batch, cols, fc, t0, extra=0.0):
        rm = column_rmse(test.values[:, cols], fc)
        for j, c in enumerate(cols):
            per_series.append([model, method, batch, Y.ids[c], repr(float(rm[j]))])
        for t in range(h):
            for j, c in enumerate(cols):
                forecasts_out.append([model, method, batch, plan.cut + t, Y.ids[c], repr(float(fc[t, j]))])
        runtime = time.perf_counter() - t0 + extra
        prov["timings"][f"{model}/{method}/{batch}"] = runtime
        rows.append(ReportRow(data.name, model, method, batch, float(rm.mean()), cfg.seed,
                              len(cols), "ok", chash, runtime))

    def failed(model, method, batch, exc, t0):
        log.warning("%s/%s/%s failed: %s", model, method, batch, exc)
        rows.append(ReportRow(data.name, model, method, batch, float("nan"), cfg.seed, 0,
                              getattr(exc, "category", type(exc).__name__), chash,
                              time.perf_counter() - t0))

    pool_cols = np.array(plan.clusterwise + plan.classifier_test)
    for model in cfg.models:
        if "all-data" in cfg.methods:
            t0 = time.perf_counter()
            batch_cols = np.array(plan.batches[largest])
            fit_cols = np.concatenate([pool_cols, batch_cols])
            try:
                Y_fit = train.columns(fit_cols)
                fc = _global_forecasts(model, Y_fit, np.arange(len(pool_cols), len(fit_cols)),
                                       h, cfg, cfg.seed)
                record(model, "all-data", largest, batch_cols, fc, t0)
            except TopoRFMError as exc:
                failed(model, "all-data", largest, exc, t0)

    cw_methods = [m for m in cfg.methods if m != "all-data"]
    if cw_methods:
        cw_cols = np.array(plan.clusterwise)
        q_cols = np.array(plan.classifier_test)
        Y_cw = train.columns(cw_cols)
        t_ens = time.perf_counter()
        users = rfm_users(Y_cw)
        ens = topological_rfm_clusters(users, cfg)
        prov["base_k"] = [c.k for c in ens.clusterings]
        artifacts.update(_rfm_exports(users, ens, cfg))
        recipe = FeatureRecipe(cfg.tda.window, cfg.tda.stride).fit(Y_cw)
        X_cw = recipe.transform(Y_cw)
        ens_time = time.perf_counter() - t_ens
        for method in cw_methods:
            cons = consensus_labels(ens, method, cfg, cfg.seed)
            artifacts[f"consensus_{method}.csv"] = consensus_to_csv(Y_cw.ids, cons)
            for model in cfg.models:
                t0 = time.perf_counter()
                tag = f"{model}_{method}"
                try:
                    init = merge_small_clusters(cons.labels, min_cluster_size(model, cfg.trmf))
                    cw = clusterwise_fit(Y_cw, init, model, cfg.trmf, seed=cfg.seed,
                                         max_rounds=cfg.clusterwise.max_rounds,
                                         tol=cfg.clusterwise.tol)
                    artifacts[f"labels_{tag}.csv"] = labels_to_csv(Y_cw.ids, cw.partition.labels)
                    label_rows.extend([model, method, u, int(c)]
                                      for u, c in zip(Y_cw.ids, cw.partition.labels))
                    clf = None
                    if cw.k > 1:
                        c = cfg.classifier
                        clf = train_label_classifier(X_cw, cw.partition, c.rounds, c.depth, c.rate,
                                                     seed=cfg.seed, recipe=recipe)
                    prov.setdefault("clusterwise", {})[tag] = {
                        "k": cw.k, "sizes": np.bincount(cw.partition.labels).tolist(),
                        "stop_reason": cw.stop_reason, "moves": list(cw.moves_per_round),
                        "objective_trace": list(cw.objective_trace),
                        "classifier_training_accuracy": None if clf is None else clf.training_accuracy,
                        "classifier_test_accuracy": _classifier_test_accuracy(cw, clf, train, q_cols),
                    }
                    # nested batches share one labelling of the largest batch
                    big = np.array(plan.batches[largest])
                    Y_big = train.columns(big)
                    labels, scores = assign_labels(cw, clf, Y_big)
                    artifacts[f"assignments_{tag}.csv"] = assignments_to_csv(Y_big.ids, labels, scores)
                    fc_big = forecast_members(cw, labels, Y_big, h)
                    for b in sorted(plan.batches):
                        n_b = len(plan.batches[b])
                        record(model, method, b, big[:n_b], fc_big[:, :n_b], t0, ens_time)
                except TopoRFMError as exc:
                    for b in sorted(plan.batches):
                        failed(model, method, b, exc, t0)

    artifacts["per_series_rmse.csv"] = _table(["model", "method", "batch", "user_id", "rmse"], per_series)
    artifacts["labels.csv"] = _table(["model", "method", "user_id", "label"], label_rows)
    artifacts["forecasts.csv"] = _table(["model", "method", "batch", "period", "user_id", "value"],
                                        forecasts_out)
    report = Report(tuple(rows), prov)
    _write_artifacts(out_dir, artifacts)
    _write_report(out_dir, report)
    return report


def _classifier_test_accuracy(cw, clf, train: SeriesMatrix, q_cols) -> float | None:
    """Agreement of predicted labels with the lowest-error cluster on held-out pool series."""
    if clf is None or cw.backend != "trmf" or not len(q_cols):
        return None
    from .clusterwise import _score_matrix

    Yq = train.columns(q_cols)
    ref = _score_matrix(train, np.asarray(q_cols), cw.per_cluster_models, cw.backend).argmin(axis=1)
    pred, _ = assign_labels(cw, clf, Yq)
    return float((pred == ref).mean())


def _rfm_exports(users, ens: EnsembleInput, cfg: PipelineConfig) -> dict:
    out = {}
    rows = [[u.user_id, repr(float(u.recency[-1])), repr(float(u.frequency[-1])),
             repr(float(u.monetary.sum()))] for u in users]
    out["rfm_final.csv"] = _table(["user_id", "recency", "frequency", "monetary_total"], rows)
    for dim, cl in zip(RFM_DIMENSIONS, ens.clusterings):
        out[f"labels_{dim}.csv"] = labels_to_csv([u.user_id for u in users], cl.labels)
    # barcodes of the first few users per dimension, for plotting
    for dim in RFM_DIMENSIONS:
        lines = ["user_id,dim,birth,death"]
        for u in users[:20]:
            dgm = rips_persistence(delay_embed(getattr(u, dim), cfg.tda.window, cfg.tda.stride))
            for ln in diagram_to_csv(dgm).splitlines()[1:]:
                lines.append(f"{u.user_id},{ln}")
        out[f"diagrams/{dim}.csv"] = "\n".join(lines) + "\n"
    return out


def _table(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _write_artifacts(out_dir, artifacts: dict):
    if not out_dir:
        return
    for name, text in artifacts.items():
        write_atomic(os.path.join(out_dir, name), text)


def _write_report(out_dir, report: Report):
    if not out_dir:
        return
    write_atomic(os.path.join(out_dir, "report.csv"), report.to_csv())
    write_atomic(os.path.join(out_dir, "report.json"), report.to_json())


def experiment_grid(cfgs, data: Dataset | None = None) -> Report:
    """Run each config and concatenate the rows; a failing config leaves an error row."""
    rows, prov = [], {"cells": []}
    for cfg in cfgs:
        try:
            rep = run_pipeline(cfg, data)
            rows.extend(rep.rows)
            prov["cells"].append(rep.provenance.get("config_hash"))
        except TopoRFMError as exc:
            rows.append(ReportRow(cfg.dataset.name, ",".join(cfg.models), ",".join(cfg.methods), 0,
                                  float("nan"), cfg.seed, 0, exc.category, cfg.config_hash()))
    return Report(tuple(rows), prov)


__all__ = [
    "ClassifierConfig", "ClusterConfig", "ClusterwiseConfig", "Dataset", "DatasetConfig",
    "EnsembleConfig", "PipelineConfig", "Report", "ReportRow", "SplitConfig", "SplitPlan",
    "TDAConfig", "consensus_labels", "experiment_grid", "feature_matrix", "load_dataset",
    "merge_small_clusters", "plan_splits", "rfm_users", "run_pipeline", "topological_rfm_clusters",
]
