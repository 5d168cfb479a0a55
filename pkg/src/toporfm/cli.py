"""Command-line front end.

Every subcommand reads one YAML config (plus ``--set key=value`` overrides),
writes its outputs atomically under ``--out`` and stamps the config hash and
seed into ``run.json``. Errors print a JSON line ``{"error": category, ...}``
on stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import pickle
import sys
from dataclasses import replace
from datetime import timedelta

import numpy as np

from . import __version__
from ._io import write_atomic
from .cluster import labels_to_csv
from .clusterwise import (
    FeatureRecipe,
    assign_labels,
    assignments_to_csv,
    clusterwise_fit,
    forecast_members,
    min_cluster_size,
    train_label_classifier,
)
from .config import dump_config, parse_config
from .ensemble import consensus_to_csv
from .errors import ConfigError, DataError, TopoRFMError
from .experiment import (
    PipelineConfig,
    _rfm_exports,
    _table,
    consensus_labels,
    experiment_grid,
    load_dataset,
    merge_small_clusters,
    plan_splits,
    rfm_users,
    run_pipeline,
    topological_rfm_clusters,
)
from .ingest import FORMATS, format_event_log, read_event_log, rfm_scores
from .synth import cloud_event_log

log = logging.getLogger("toporfm")

EXIT_CODES = {
    "ConfigError": 2,
    "DataError": 3,
    "EmptyLog": 3,
    "FormatError": 3,
    "RangeError": 3,
    "ShapeError": 3,
    "WindowError": 4,
    "CardinalityError": 4,
    "InsufficientHistory": 4,
    "DegenerateLabels": 4,
    "FitError": 5,
}
STAMP = "run.json"


class Skip(Exception):
    """Outputs for this config hash already exist."""


# --------------------------------------------------------------------------
# output handling


def _stamp(args, cfg: PipelineConfig) -> dict:
    return {"subcommand": args.command, "config_hash": cfg.config_hash(), "seed": cfg.seed,
            "version": __version__}


def _prepare_out(args, cfg: PipelineConfig) -> str:
    out = args.out
    path = os.path.join(out, STAMP)
    if os.path.exists(path) and not args.force:
        with open(path) as fh:
            try:
                old = json.load(fh)
            except json.JSONDecodeError:
                old = {}
        if old.get("config_hash") == cfg.config_hash() and old.get("subcommand") == args.command:
            raise Skip(out)
    os.makedirs(out, exist_ok=True)
    return out


def _finish(args, cfg: PipelineConfig, files: dict):
    out = args.out
    for name, text in files.items():
        write_atomic(os.path.join(out, name), text)
    write_atomic(os.path.join(out, "config.effective.yaml"), dump_config(cfg))
    write_atomic(os.path.join(out, STAMP), json.dumps(_stamp(args, cfg), indent=1) + "\n")


# --------------------------------------------------------------------------
# subcommands


def _pool_users(cfg: PipelineConfig):
    data = load_dataset(cfg)
    plan = plan_splits(data.demand.n, data.demand.T, cfg)
    train = data.demand.rows(0, plan.cut)
    return data, plan, train, train.columns(np.array(plan.clusterwise))


def cmd_synth(args, cfg):
    ev = cloud_event_log(args.users, args.weeks, seed=args.seed)
    name = "events.csv" if args.format == "generic-csv" else "events.txt"
    return {name: format_event_log(ev, args.format)}


def cmd_ingest(args, cfg):
    data = load_dataset(cfg)
    Y, grid = data.demand, data.grid
    rows = [[grid.origin + timedelta(days=grid.period_length * int(t)), u, repr(float(Y.values[t, j]))]
            for j, u in enumerate(Y.ids) for t in np.flatnonzero(Y.values[:, j])]
    files = {"demand.csv": _table(["period_start", "user_id", "value"], rows)}
    if cfg.dataset.path:
        ev = read_event_log(cfg.dataset.path, cfg.dataset.format)
    else:
        ev = cloud_event_log(cfg.dataset.synthetic_users, cfg.dataset.synthetic_weeks,
                             seed=cfg.dataset.synthetic_seed)
    scores = rfm_scores(ev, ev.span[1])
    files["rfm_scores.csv"] = _table(["user_id", "r", "f", "m", "code"],
                                     [[u, s.r, s.f, s.m, s.code()] for u, s in sorted(scores.items())])
    return files


def cmd_cluster(args, cfg):
    _, _, _, Y_cw = _pool_users(cfg)
    users = rfm_users(Y_cw)
    ens = topological_rfm_clusters(users, cfg)
    files = _rfm_exports(users, ens, cfg)
    files["labels.csv"] = _table(["user_id", "recency", "frequency", "monetary"],
                                 [[u.user_id, *(int(c.labels[i]) for c in ens.clusterings)]
                                  for i, u in enumerate(users)])
    return files


def _consensus(cfg, Y_cw):
    ens = topological_rfm_clusters(rfm_users(Y_cw), cfg)
    methods = [m for m in cfg.methods if m != "all-data"]
    if not methods:
        raise ConfigError("methods must include gmm_vote or gmm_pair")
    return {m: consensus_labels(ens, m, cfg, cfg.seed) for m in methods}


def cmd_ensemble(args, cfg):
    _, _, _, Y_cw = _pool_users(cfg)
    files, rows = {}, []
    for method, cons in _consensus(cfg, Y_cw).items():
        files[f"consensus_{method}.csv"] = consensus_to_csv(Y_cw.ids, cons)
        rows.extend([method, u, int(c)] for u, c in zip(Y_cw.ids, cons.labels))
    files["labels.csv"] = _table(["method", "user_id", "label"], rows)
    return files


def cmd_fit(args, cfg):
    _, plan, _, Y_cw = _pool_users(cfg)
    method, cons = next(iter(_consensus(cfg, Y_cw).items()))
    model = cfg.models[0]
    init = merge_small_clusters(cons.labels, min_cluster_size(model, cfg.trmf))
    cw = clusterwise_fit(Y_cw, init, model, cfg.trmf, seed=cfg.seed,
                         max_rounds=cfg.clusterwise.max_rounds, tol=cfg.clusterwise.tol)
    recipe = FeatureRecipe(cfg.tda.window, cfg.tda.stride).fit(Y_cw)
    clf = None
    if cw.k > 1:
        c = cfg.classifier
        clf = train_label_classifier(recipe.transform(Y_cw), cw.partition, c.rounds, c.depth,
                                     c.rate, seed=cfg.seed, recipe=recipe)
    bundle = {"model": cw, "classifier": clf, "cut": plan.cut, "method": method,
              "config_hash": cfg.config_hash()}
    os.makedirs(args.out, exist_ok=True)
    tmp = os.path.join(args.out, ".model.pkl.tmp")
    with open(tmp, "wb") as fh:
        pickle.dump(bundle, fh)
    os.replace(tmp, os.path.join(args.out, "model.pkl"))
    return {"labels.csv": labels_to_csv(Y_cw.ids, cw.partition.labels),
            "fit.json": json.dumps({"backend": model, "method": method, "k": cw.k,
                                    "stop_reason": cw.stop_reason,
                                    "objective_trace": list(cw.objective_trace)}, indent=1) + "\n"}


def cmd_forecast(args, cfg):
    if not os.path.exists(args.model):
        raise DataError(f"model bundle not found: {args.model}")
    with open(args.model, "rb") as fh:
        bundle = pickle.load(fh)
    data = load_dataset(cfg)
    plan = plan_splits(data.demand.n, data.demand.T, cfg)
    cut = bundle["cut"]
    cols = np.array(plan.batches[max(plan.batches)])
    Y_new = data.demand.rows(0, cut).columns(cols)
    h = args.horizon or data.demand.T - cut
    labels, scores = assign_labels(bundle["model"], bundle["classifier"], Y_new)
    fc = forecast_members(bundle["model"], labels, Y_new, h)
    rows = [[cut + t, u, repr(float(fc[t, j]))] for t in range(h) for j, u in enumerate(Y_new.ids)]
    return {"labels.csv": assignments_to_csv(Y_new.ids, labels, scores),
            "forecasts.csv": _table(["period", "user_id", "value"], rows)}


def cmd_experiment(args, cfg):
    if args.seeds:
        seeds = [int(s) for s in args.seeds.split(",")]
        report = experiment_grid([replace(cfg, seed=s, output_dir=os.path.join(args.out, f"seed{s}"))
                                 for s in seeds])
        return {"report.csv": report.to_csv(), "report.json": report.to_json()}
    run_pipeline(cfg)  # writes its own artifacts under output_dir
    return {}


COMMANDS = {
    "ingest": cmd_ingest,
    "cluster": cmd_cluster,
    "ensemble": cmd_ensemble,
    "fit": cmd_fit,
    "forecast": cmd_forecast,
    "experiment": cmd_experiment,
    "synth": cmd_synth,
}


# --------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-c", "--config", help="YAML config file")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="dotted-path override, e.g. tda.window=6 (repeatable)")
    common.add_argument("-o", "--out", default="out", help="output directory")
    common.add_argument("--force", action="store_true",
                        help="overwrite outputs even if they match the config hash")
    common.add_argument("-v", "--verbose", action="count", default=0)

    parser = argparse.ArgumentParser(prog="toporfm", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("ingest", parents=[common], help="demand matrix and RFM quintile scores")
    sub.add_parser("cluster", parents=[common], help="topological RFM base clusterings")
    sub.add_parser("ensemble", parents=[common], help="GMM consensus of the base clusterings")
    sub.add_parser("fit", parents=[common], help="clusterwise model and label classifier")
    p = sub.add_parser("forecast", parents=[common], help="assign and forecast the unlabeled batch")
    p.add_argument("--model", required=True, help="model.pkl written by `fit`")
    p.add_argument("--horizon", type=int, default=0, help="steps ahead (default: evaluation tail)")
    p = sub.add_parser("experiment", parents=[common], help="full pipeline and report")
    p.add_argument("--seeds", help="comma separated seeds; runs one grid cell per seed")
    p = sub.add_parser("synth", parents=[common], help="synthetic cloud-usage event log")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--users", type=int, default=60)
    p.add_argument("--weeks", type=int, default=104)
    p.add_argument("--format", choices=FORMATS, default="generic-csv")
    return parser


def _error(category: str, message: str) -> int:
    print(json.dumps({"error": category, "message": message}), file=sys.stderr)
    return EXIT_CODES.get(category, 1)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = parse_config(args.config, args.overrides)
        if args.command == "synth":
            cfg = parse_config(args.config, args.overrides + [f"seed={args.seed}"])
        cfg = _with_output(cfg, args.out)
        log.info("effective config:\n%s", dump_config(cfg))
        _prepare_out(args, cfg)
        files = COMMANDS[args.command](args, cfg)
        _finish(args, cfg, files)
    except Skip as skip:
        print(f"outputs in {skip} match this config; use --force to overwrite", file=sys.stderr)
        return 0
    except TopoRFMError as exc:
        return _error(exc.category, str(exc))
    except OSError as exc:
        return _error("DataError", str(exc))
    except Exception as exc:  # anything unexpected still gets a category
        log.debug("unhandled error", exc_info=True)
        return _error("InternalError", f"{type(exc).__name__}: {exc}")
    return 0


def _with_output(cfg: PipelineConfig, out: str) -> PipelineConfig:
    return replace(cfg, output_dir=out)


if __name__ == "__main__":
    sys.exit(main())
