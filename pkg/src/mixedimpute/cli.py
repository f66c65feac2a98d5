"""Command-line interface: impute a file, benchmark methods, sweep forests.

Every invocation is reproducible from its flags; all randomness flows from
``--seed`` through named substreams.  Structured results are written as
JSON, per-simulation tables as CSV, and no command ever modifies its input
file.  Exit codes: 0 success, 1 failure inside the toolkit (diagnostic on
stderr), 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .data import MixedMatrix, initial_guess, load_schema, parse_csv, write_csv
from .evaluation import run_benchmark, run_sweep
from .forest import ForestParams
from .knn import KnnConfig, knn_impute_mixed
from .missforest import MissForestConfig, impute

__all__ = ["main"]

_METHOD_ALIASES = {
    "missforest": "missforest",
    "knn": "knn_cv",
    "knn_cv": "knn_cv",
    "mean": "mean_mode",
    "mean_mode": "mean_mode",
}

DEFAULT_FRACTIONS = (0.1, 0.2, 0.3)
DEFAULT_SIMULATIONS = 50
DEFAULT_NTREE_AXIS = (10, 50, 100, 250, 500)
DEFAULT_MTRY_AXIS = (1, 2, 4, 8, 16)


# ---------------------------------------------------------------------------
# flag value parsers (failures here are usage errors -> exit code 2)
# ---------------------------------------------------------------------------

def _positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}")
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {value}")
    return value


def _fraction(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number, got {text!r}")
    if not 0.0 < value < 1.0:
        raise argparse.ArgumentTypeError(f"fraction must lie in (0, 1), got {text}")
    return value


def _fraction_list(text: str) -> list[float]:
    return [_fraction(part) for part in text.split(",") if part != ""]


def _axis_ints(text: str) -> list[int]:
    values = [_positive_int(part) for part in text.split(",") if part != ""]
    if not values:
        raise argparse.ArgumentTypeError("expected a comma-separated integer list")
    return values


def _k_range(text: str) -> tuple[int, ...]:
    lo, sep, hi = text.partition(":")
    if not sep:
        raise argparse.ArgumentTypeError(
            f"expected LOW:HIGH, e.g. 1:15, got {text!r}"
        )
    low, high = _positive_int(lo), _positive_int(hi)
    if high < low:
        raise argparse.ArgumentTypeError(f"empty k range {text!r}")
    return tuple(range(low, high + 1))


def _method(text: str) -> str:
    try:
        return _METHOD_ALIASES[text]
    except KeyError:
        raise argparse.ArgumentTypeError(
            f"unknown method {text!r} (choose from missforest, knn, mean)"
        )


def _method_list(text: str) -> list[str]:
    methods = [_method(part) for part in text.split(",") if part != ""]
    if not methods:
        raise argparse.ArgumentTypeError("expected a comma-separated method list")
    return methods


# ---------------------------------------------------------------------------
# shared plumbing
# ---------------------------------------------------------------------------

def _add_io_flags(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--in", dest="input", required=True, metavar="CSV",
                     help="input CSV file (header row required)")
    sub.add_argument("--schema", metavar="JSON",
                     help="optional schema sidecar fixing column kinds/levels")
    sub.add_argument("--na-token", default="NA", metavar="TOKEN",
                     help="missing-value token (default: NA)")
    sub.add_argument("--seed", type=int, default=0,
                     help="master seed; every substream derives from it")
    sub.add_argument("--threads", type=_positive_int, default=1,
                     help="parallelism cap; results do not depend on it")


def _add_forest_flags(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--ntree", type=_positive_int, default=100,
                     help="trees per forest (default: 100)")
    sub.add_argument("--mtry", type=_positive_int, default=None,
                     help="candidate variables per split (default: floor sqrt(p))")
    sub.add_argument("--max-iterations", type=_positive_int, default=10,
                     help="missForest iteration cap (default: 10)")


def _add_knn_flags(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--k-range", type=_k_range, default=tuple(range(1, 16)),
                     metavar="LOW:HIGH", help="candidate k values (default: 1:15)")
    sub.add_argument("--cv-sets", type=_positive_int, default=5,
                     help="validation sets for choosing k (default: 5)")
    sub.add_argument("--cv-fraction", type=_fraction, default=0.1,
                     help="artificial missingness per validation set (default: 0.1)")


def _read_matrix(args: argparse.Namespace) -> MixedMatrix:
    text = Path(args.input).read_text(encoding="utf-8")
    schema = None
    if args.schema:
        schema = load_schema(Path(args.schema).read_text(encoding="utf-8"))
    return parse_csv(text, na_token=args.na_token, schema=schema)


def _mf_config(args: argparse.Namespace) -> MissForestConfig:
    forest = ForestParams(n_tree=args.ntree, m_try=args.mtry)
    return MissForestConfig(
        forest=forest, max_iterations=args.max_iterations, seed=args.seed
    )


def _knn_config(args: argparse.Namespace) -> KnnConfig:
    return KnnConfig(
        k_candidates=args.k_range,
        n_validation_sets=args.cv_sets,
        cv_missing_fraction=args.cv_fraction,
        seed=args.seed,
    )


def _sibling_csv(report_path: str) -> Path:
    path = Path(report_path)
    if path.suffix == ".json":
        return path.with_suffix(".csv")
    return Path(str(path) + ".csv")


def _write(path: str | Path, text: str) -> None:
    Path(path).write_text(text, encoding="utf-8")


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_impute(args: argparse.Namespace) -> int:
    x = _read_matrix(args)
    if args.method == "missforest":
        cfg = _mf_config(args)
        outcome = impute(x, cfg, n_threads=args.threads)
        imputed = outcome.imputed
        result = json.loads(outcome.to_json())
        parameters = {
            "n_tree": cfg.forest.n_tree,
            "m_try": cfg.forest.m_try,
            "max_iterations": cfg.max_iterations,
        }
    elif args.method == "knn_cv":
        cfg = _knn_config(args)
        outcome = knn_impute_mixed(x, cfg)
        imputed = outcome.imputed
        result = {
            "k_best": outcome.k_best,
            "k_values": list(outcome.k_values),
            "cv_errors": [list(row) for row in outcome.cv_errors.tolist()],
        }
        parameters = {
            "k_candidates": list(cfg.k_candidates),
            "n_validation_sets": cfg.n_validation_sets,
            "cv_missing_fraction": cfg.cv_missing_fraction,
        }
    else:   # mean_mode
        imputed = initial_guess(x)
        result = {}
        parameters = {}

    _write(args.out, write_csv(imputed, na_token=args.na_token))
    report = {
        "command": "impute",
        "method": args.method,
        "input": args.input,
        "output": args.out,
        "na_token": args.na_token,
        "seed": args.seed,
        "threads": args.threads,
        "cells_imputed": int(x.n_missing),
        "parameters": parameters,
        "result": result,
    }
    report_path = args.report or str(Path(args.out).with_name(
        Path(args.out).stem + ".report.json"
    ))
    _write(report_path, json.dumps(report, sort_keys=True, indent=2) + "\n")
    print(f"imputed {x.n_missing} cells -> {args.out} (report: {report_path})")
    return 0


def cmd_benchmark(args: argparse.Namespace) -> int:
    x = _read_matrix(args)
    report = run_benchmark(
        x,
        methods=args.methods,
        fractions=args.fractions,
        n_simulations=args.sims,
        seed=args.seed,
        mf_config=_mf_config(args),
        knn_config=_knn_config(args),
        n_threads=args.threads,
    )
    _write(args.report, report.to_json() + "\n")
    csv_path = args.csv or _sibling_csv(args.report)
    _write(csv_path, report.to_csv())
    print(f"benchmark report: {args.report} (table: {csv_path})")
    return 0


def cmd_sweep(args: argparse.Namespace) -> int:
    x = _read_matrix(args)
    report = run_sweep(
        x,
        fraction=args.fraction,
        n_tree_axis=args.ntree,
        m_try_axis=args.mtry,
        n_simulations=args.sims,
        seed=args.seed,
        mf_config=MissForestConfig(max_iterations=args.max_iterations),
        n_threads=args.threads,
    )
    _write(args.report, report.to_json() + "\n")
    csv_path = args.csv or _sibling_csv(args.report)
    _write(csv_path, report.to_csv())
    print(f"sweep report: {args.report} (table: {csv_path})")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mixedimpute",
        description="Iterative random-forest imputation for mixed-type data, "
                    "with a KNN baseline and benchmarking tools.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_imp = sub.add_parser("impute", help="fill the missing cells of a CSV")
    _add_io_flags(p_imp)
    p_imp.add_argument("--out", required=True, metavar="CSV",
                       help="where to write the completed CSV")
    p_imp.add_argument("--report", metavar="JSON",
                       help="report path (default: alongside --out)")
    p_imp.add_argument("--method", type=_method, default="missforest",
                       help="missforest (default), knn, or mean")
    _add_forest_flags(p_imp)
    _add_knn_flags(p_imp)
    p_imp.set_defaults(func=cmd_impute)

    p_bench = sub.add_parser(
        "benchmark", help="compare methods on a complete ground-truth CSV"
    )
    _add_io_flags(p_bench)
    p_bench.add_argument("--report", required=True, metavar="JSON",
                         help="where to write the JSON report")
    p_bench.add_argument("--csv", metavar="CSV",
                         help="per-simulation table (default: next to --report)")
    p_bench.add_argument("--methods", type=_method_list,
                         default=["missforest", "knn_cv", "mean_mode"],
                         help="comma-separated list (default: missforest,knn,mean)")
    p_bench.add_argument("--fractions", type=_fraction_list,
                         default=list(DEFAULT_FRACTIONS),
                         help="missingness fractions (default: 0.1,0.2,0.3)")
    p_bench.add_argument("--sims", type=_positive_int,
                         default=DEFAULT_SIMULATIONS,
                         help="simulations per fraction (default: 50)")
    _add_forest_flags(p_bench)
    _add_knn_flags(p_bench)
    p_bench.set_defaults(func=cmd_benchmark)

    p_sweep = sub.add_parser(
        "sweep", help="error/runtime grid over forest size and mtry"
    )
    _add_io_flags(p_sweep)
    p_sweep.add_argument("--report", required=True, metavar="JSON",
                         help="where to write the JSON report")
    p_sweep.add_argument("--csv", metavar="CSV",
                         help="per-simulation table (default: next to --report)")
    p_sweep.add_argument("--fraction", type=_fraction, default=0.1,
                         help="missingness fraction (default: 0.1)")
    p_sweep.add_argument("--ntree", type=_axis_ints,
                         default=list(DEFAULT_NTREE_AXIS),
                         help="forest-size axis (default: 10,50,100,250,500)")
    p_sweep.add_argument("--mtry", type=_axis_ints,
                         default=list(DEFAULT_MTRY_AXIS),
                         help="mtry axis (default: 1,2,4,8,16)")
    p_sweep.add_argument("--sims", type=_positive_int,
                         default=DEFAULT_SIMULATIONS,
                         help="simulations per cell (default: 50)")
    p_sweep.add_argument("--max-iterations", type=_positive_int, default=10,
                         help="missForest iteration cap (default: 10)")
    p_sweep.set_defaults(func=cmd_sweep)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
