"""Command-line interface: simulate, discover, estimate, replicate.

Every artifact embeds the fully resolved run configuration and seed so any
output can be reproduced from its own metadata. Outputs are computed in full
before any file is written, so a failing run never leaves partial artifacts.
Exit codes: 0 success, 2 usage, 3 data error, 4 estimation error.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np

from .config import RunConfig
from .errors import DataError, EstimationError, SdldError
from .estimators import estimate_effect, estimate_potential_outcome_mean, fit_propensity_models
from .inference import run_sdld
from .panel import (
    load_panel_csv,
    load_schema_json,
    truncate_at,
    write_panel_csv,
    write_schema_json,
)
from .simulation import (
    REPLICATE_CSV_HEADER,
    SimulationConfig,
    benchmark_schema,
    run_simulation_study,
    simulate_panel,
)
from .tree import Tree

USAGE_EXIT = 2
DATA_EXIT = 3
ESTIMATION_EXIT = 4


def _default_threads():
    env = os.environ.get("SDLD_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return 1


def _parse_regime(text):
    return tuple(int(tok) for tok in text.replace(",", " ").split())


def _config_from_args(args):
    base = RunConfig.from_json(args.config) if getattr(args, "config", None) else RunConfig()
    overrides = {
        "estimator": getattr(args, "estimator", None),
        "lambda_penalty": getattr(args, "lambda_penalty", None),
        "discovery_fraction": getattr(args, "discovery_fraction", None),
        "build_fraction": getattr(args, "build_fraction", None),
        "min_node_size": getattr(args, "min_node_size", None),
        "min_regime_followers": getattr(args, "min_regime_followers", None),
        "max_depth": getattr(args, "max_depth", None),
        "cutpoint_grid": getattr(args, "cutpoint_grid", None),
        "truncation_bound": getattr(args, "truncation_bound", None),
        "bootstrap_samples": getattr(args, "bootstrap", None),
        "ci_level": getattr(args, "ci_level", None),
        "seed": getattr(args, "seed", None),
        "threads": getattr(args, "threads", None),
        "keep_draws": True if getattr(args, "keep_draws", False) else None,
        "regime_treated": _parse_regime(args.regime1) if getattr(args, "regime1", None) else None,
        "regime_control": _parse_regime(args.regime0) if getattr(args, "regime0", None) else None,
    }
    return base.merged(overrides).validate()


def _schema_path(args):
    if args.schema:
        return args.schema
    root, _ = os.path.splitext(args.data)
    return root + ".schema.json"


def _load_dataset(args):
    schema = load_schema_json(_schema_path(args))
    return load_panel_csv(args.data, schema)


def _write_json(path, payload):
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def cmd_simulate(args):
    config = {
        "n": args.n,
        "seed": args.seed,
        "heterogeneous": not args.homogeneous,
    }
    data = simulate_panel(args.n, args.seed, heterogeneous=not args.homogeneous)
    write_panel_csv(data, args.out)
    root, _ = os.path.splitext(args.out)
    write_schema_json(benchmark_schema(), root + ".schema.json", extra={"generator": config})
    return 0


def cmd_discover(args):
    config = _config_from_args(args)
    data = _load_dataset(args)
    report = run_sdld(data, config)
    os.makedirs(args.out, exist_ok=True)
    report.tree.save(
        os.path.join(args.out, "tree.json"), extra={"config": config.to_dict()}
    )
    report.write_json(os.path.join(args.out, "report.json"))
    report.write_csv(os.path.join(args.out, "report.csv"))
    if config.keep_draws:
        report.write_draws_csv(os.path.join(args.out, "bootstrap_draws.csv"))
    return 0


def _estimate_rows(data, config, tree):
    """Effect per horizon-prefix time, whole population or per terminal node."""
    rows = []
    subgroups = [("all", None)]
    if tree is not None:
        assigned = tree.apply(data.baseline)
        subgroups = [
            (node.subgroup.describe(tree.baseline_names), assigned == node.node_id)
            for node in tree.terminal_nodes()
        ]
    for time in range(1, data.horizon + 2):
        prefix = truncate_at(data, time)
        reg1 = config.regime_treated[:time]
        reg0 = config.regime_control[:time]
        for label, mask in subgroups:
            use = np.ones(prefix.n_subjects, dtype=bool) if mask is None else mask
            kwargs = config.estimator_kwargs()
            method = kwargs.pop("method")
            try:
                models = fit_propensity_models(
                    prefix, reg1, use, bound=config.truncation_bound,
                    propensity_design=config.propensity_design,
                )
                mu1 = estimate_potential_outcome_mean(
                    prefix, reg1, use, method, models=models, **kwargs
                )
                mu0 = estimate_potential_outcome_mean(
                    prefix, reg0, use, method, models=models, **kwargs
                )
                effect = estimate_effect(prefix, reg1, reg0, use, method, **kwargs)
                rows.append([
                    time, label, int(use.sum()),
                    repr(mu1.mean), repr(mu0.mean),
                    repr(effect.delta), repr(effect.variance),
                ])
            except EstimationError:
                rows.append([time, label, int(use.sum()), "", "", "", ""])
    return rows


def cmd_estimate(args):
    config = _config_from_args(args)
    data = _load_dataset(args)
    config = config.resolve_regimes(data.horizon)
    tree = Tree.load(args.tree) if args.tree else None
    rows = _estimate_rows(data, config, tree)
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([
            "time", "subgroup", "n", "mean_treated", "mean_control",
            "effect", "variance",
        ])
        writer.writerows(rows)
    root, _ = os.path.splitext(args.out)
    _write_json(root + ".config.json", {"config": config.to_dict()})
    return 0


def cmd_replicate(args):
    config = _config_from_args(args)
    sim = SimulationConfig(
        n=args.n, n_build=args.n_build, n_validate=args.n_validate,
        seed=config.seed, replicates=args.reps,
    )
    metrics, records = run_simulation_study(
        sim, config, heterogeneous=not args.homogeneous, n_jobs=config.threads
    )
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "replicates.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(REPLICATE_CSV_HEADER)
        for record in records:
            writer.writerow(record.csv_row())
    _write_json(os.path.join(args.out, "metrics.json"), {
        "config": config.to_dict(),
        "simulation": {
            "n": sim.n, "n_build": sim.n_build, "n_validate": sim.n_validate,
            "seed": sim.seed, "replicates": sim.replicates,
            "heterogeneous": not args.homogeneous,
        },
        "metrics": metrics.to_dict(),
        "errors": [
            {"replicate": r.replicate, "error": r.error}
            for r in records if r.error is not None
        ],
    })
    return 0


def _add_common_config_flags(parser):
    parser.add_argument("--config", help="JSON config file; flags override its values")
    parser.add_argument("--estimator", choices=("tmle", "gcomp", "ipw"))
    parser.add_argument("--lambda", dest="lambda_penalty", type=float,
                        help="split-complexity penalty (default: chi-square 95th percentile)")
    parser.add_argument("--min-node-size", type=int)
    parser.add_argument("--min-regime-followers", type=int)
    parser.add_argument("--max-depth", type=int)
    parser.add_argument("--cutpoint-grid", type=int)
    parser.add_argument("--truncation-bound", type=float)
    parser.add_argument("--seed", type=int)
    parser.add_argument("--threads", type=int, default=_default_threads(),
                        help="worker processes (default: SDLD_THREADS or 1)")
    parser.add_argument("--regime1", help="treated regime, e.g. '1,1'")
    parser.add_argument("--regime0", help="control regime, e.g. '0,0'")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="sdld",
        description="Subgroup discovery for longitudinal data with time-varying treatments.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="write a synthetic benchmark panel as wide CSV")
    p_sim.add_argument("--n", type=int, required=True)
    p_sim.add_argument("--seed", type=int, default=0)
    p_sim.add_argument("--out", required=True, help="output CSV path")
    p_sim.add_argument("--homogeneous", action="store_true",
                       help="generate the constant-effect null variant")
    p_sim.set_defaults(func=cmd_simulate)

    p_disc = sub.add_parser("discover", help="run the full honest discovery pipeline")
    p_disc.add_argument("--data", required=True, help="wide CSV panel")
    p_disc.add_argument("--schema", help="schema JSON (default: <data>.schema.json)")
    p_disc.add_argument("--out", required=True, help="output directory")
    p_disc.add_argument("--discovery-fraction", type=float)
    p_disc.add_argument("--build-fraction", type=float)
    p_disc.add_argument("--bootstrap", type=int, help="bootstrap replicates for leaf CIs")
    p_disc.add_argument("--ci-level", type=float)
    p_disc.add_argument("--keep-draws", action="store_true",
                        help="also write the raw bootstrap draws")
    _add_common_config_flags(p_disc)
    p_disc.set_defaults(func=cmd_discover)

    p_est = sub.add_parser("estimate",
                           help="effects at each horizon prefix, optionally per subgroup")
    p_est.add_argument("--data", required=True)
    p_est.add_argument("--schema")
    p_est.add_argument("--tree", help="tree JSON; reports per terminal node when given")
    p_est.add_argument("--out", required=True, help="output CSV path")
    _add_common_config_flags(p_est)
    p_est.set_defaults(func=cmd_estimate)

    p_rep = sub.add_parser("replicate", help="run the simulation study and write metrics")
    p_rep.add_argument("--reps", type=int, required=True)
    p_rep.add_argument("--n", type=int, default=12000)
    p_rep.add_argument("--n-build", type=int, default=10000)
    p_rep.add_argument("--n-validate", type=int, default=2000)
    p_rep.add_argument("--out", required=True, help="output directory")
    p_rep.add_argument("--homogeneous", action="store_true")
    _add_common_config_flags(p_rep)
    p_rep.set_defaults(func=cmd_replicate)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if exc.code is not None else USAGE_EXIT
    try:
        return args.func(args)
    except DataError as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}),
              file=sys.stderr)
        return DATA_EXIT
    except (EstimationError, SdldError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}),
              file=sys.stderr)
        return ESTIMATION_EXIT
    except (ValueError, FileNotFoundError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}),
              file=sys.stderr)
        return USAGE_EXIT


if __name__ == "__main__":
    sys.exit(main())
