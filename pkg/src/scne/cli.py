"""Command-line entry point: ``scne <command> [options]``.

Commands
--------
demo      synthetic-function demonstration (timing and weight correlations)
train     estimate, retrain on train+val, report test RMSE over repeats
estimate  per-group hidden-node (SCN) or scope (RVFL) estimation
sweep     test-RMSE box statistics across a set of lambda values
bench     ensemble construction timing
predict   apply a saved ensemble to a CSV file

Exit status is 0 on success, 2 for configuration errors, 3 for data errors
and 4 for numerical failures.
"""
from __future__ import annotations

import argparse
import logging
import sys

import numpy as np

from . import lab, ncl
from .errors import (
    ConfigError,
    ConstructionError,
    DataError,
    ParameterError,
    RankError,
    ScneError,
    ShapeError,
    SpecError,
)

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

OUTPUTS = """\
outputs (written under --out):
  demo      corr_plain.csv, corr_regularized.csv  columns L_m, L_total, A1_A2, A1_A3, A2_A3
            time_plain.csv, time_regularized.csv  columns L_m, L_total, method, wall_seconds
  bench     bench.csv with the time_*.csv columns
  train     results.csv  columns family, method, train/test RMSE mean and std
            results.json (per-trial values), model.json (saved ensemble)
  estimate  estimates.csv  chosen L and per-repeat argmins, or alpha* and RMSE per alpha
  sweep     sweep.csv  columns lambda, median, q1, q3, fences, outliers
  every command also writes manifest.json (config echo, seed, versions, wall times).
CSV numbers carry 6 significant digits; JSON files keep full precision.
"""


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment configuration (JSON)")
    common.add_argument("--seed", type=int, help="master seed, overrides the config")
    common.add_argument("--out", help="output directory, overrides the config")
    common.add_argument("--method", choices=ncl.METHODS, help="NCL solver")
    common.add_argument("--ridge", type=float, help="ridge term r for the NCL solve")
    common.add_argument("--normalize-target", action="store_true",
                        help="0-1 normalize the target with training-set parameters")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress")

    parser = argparse.ArgumentParser(
        prog="scne",
        description="Decorrelated SCN ensembles solved by negative correlation learning.",
        epilog=OUTPUTS,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("demo", parents=[common], help="synthetic demonstration")
    sub.add_parser("train", parents=[common], help="train and evaluate ensembles")
    est = sub.add_parser("estimate", parents=[common], help="hyperparameter estimation")
    est.add_argument("--mode", choices=("scn", "rvfl"), help="what to estimate")
    sub.add_parser("sweep", parents=[common], help="lambda robustness sweep")
    sub.add_parser("bench", parents=[common], help="construction timing")
    pred = sub.add_parser("predict", parents=[common], help="predict with a saved model")
    pred.add_argument("model", help="model.json written by train")
    pred.add_argument("input", help="CSV with the model's feature columns (target optional)")
    return parser


def _config(args):
    cfg = lab.load_config(args.config) if args.config else lab.ExperimentConfig()
    return cfg.with_overrides(args.seed, args.out, args.method, args.ridge, args.normalize_target)


def _run(args):
    if args.command == "predict":
        out = args.out or "predictions.csv"
        pred = lab.run_predict(args.model, args.input, out)
        print(f"wrote {pred.size} predictions")
        return
    cfg = _config(args)
    if args.command == "demo":
        summary = lab.run_demo(cfg)
        for tag, part in summary.items():
            worst = min(min(r["a1_a2"], r["a1_a3"], r["a2_a3"]) for r in part["correlations"])
            print(f"{tag}: lowest pairwise weight correlation {worst:.6g}")
    elif args.command == "train":
        result = lab.run_train(cfg)
        for row in result["table"]:
            print(f"{row['family']:5s} {row['label']:19s} test RMSE "
                  f"{row['test_mean']:.6g} +- {row['test_std']:.6g}")
    elif args.command == "estimate":
        result = lab.run_estimate(cfg, args.mode)
        print(f"{result['mode']}: {result['chosen']}")
    elif args.command == "sweep":
        result = lab.run_sweep(cfg)
        for st in result["stats"]:
            print(f"lambda {st['lambda']:g}: median test RMSE {st['median']:.6g}")
        print(f"median spread {result['median_spread']:.3%}")
    elif args.command == "bench":
        methods = (args.method,) if args.method else ("analytic", "jacobi", "gauss_seidel")
        for r in lab.run_bench(cfg, methods):
            print(f"L_total {r.L_total:6d} {r.method:13s} {r.wall_seconds:.4g} s")
    print(f"outputs in {cfg.out}")


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        _run(args)
    except (ConfigError, SpecError, ParameterError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, ShapeError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (RankError, ConstructionError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ScneError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
