"""Imputation-error metrics, MCAR injection, the paired Wilcoxon test, and
the multi-simulation benchmark/sweep runners.

All randomness derives from named substreams of one seed: the mask for
simulation t at fraction index fi comes from (seed, MASK, fi, t), forest
seeds from (seed, FOREST, fi, t), and KNN cross-validation seeds from
(seed, CV, fi, t).  Every method inside one simulation imputes the same
masked matrix, which is what makes the per-simulation error differences
paired.
"""

from __future__ import annotations

import csv
import io
import json
import math
import time
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np
from scipy.stats import rankdata

from ._rng import TAG_CV, TAG_FOREST, TAG_MASK, subseed
from .data import MixedMatrix, initial_guess

__all__ = [
    "MissingnessSpec",
    "inject_mcar",
    "nrmse",
    "pfc",
    "wilcoxon_paired",
    "BenchmarkReport",
    "run_benchmark",
    "SweepReport",
    "run_sweep",
    "KNOWN_METHODS",
]

KNOWN_METHODS = ("missforest", "knn_cv", "mean_mode")

# effective sample sizes up to this bound get the exact signed-rank null
EXACT_WILCOXON_LIMIT = 20


@dataclass(frozen=True)
class MissingnessSpec:
    fraction: float
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 < self.fraction < 1.0:
            raise ValueError("fraction must lie in (0, 1)")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")


def inject_mcar(x: MixedMatrix, spec: MissingnessSpec) -> tuple[MixedMatrix, np.ndarray]:
    """Mask round(fraction*n*p) cells uniformly at random.

    Masks that would empty out a column are rejected and redrawn (up to
    1000 attempts).  Returns the masked matrix and the injected mask."""
    if not x.is_complete():
        raise ValueError("injection requires a complete matrix")
    n_cells = x.n * x.p
    k = int(round(spec.fraction * n_cells))
    if k == 0:
        return x, np.zeros((x.n, x.p), dtype=bool)
    rng = np.random.default_rng(spec.seed)
    for _ in range(1000):
        flat = rng.choice(n_cells, size=k, replace=False)
        mask = np.zeros(n_cells, dtype=bool)
        mask[flat] = True
        mask = mask.reshape(x.n, x.p)
        if (~mask).sum(axis=0).min() >= 1:
            values = x.values.copy()
            values[mask] = np.nan
            return MixedMatrix(values, mask, x.schema), mask
    raise RuntimeError("cannot satisfy column coverage after 1000 mask draws")


def _check_metric_inputs(x_true: MixedMatrix, x_imp: MixedMatrix, mask: np.ndarray) -> np.ndarray:
    if x_true.values.shape != x_imp.values.shape or x_true.schema != x_imp.schema:
        raise ValueError("matrices differ in shape or schema")
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != x_true.values.shape:
        raise ValueError("mask shape does not match matrices")
    return mask


def nrmse(x_true: MixedMatrix, x_imp: MixedMatrix, mask: np.ndarray) -> float:
    """Root mean squared error over masked continuous cells, normalized by
    the population standard deviation of the true values at those cells."""
    mask = _check_metric_inputs(x_true, x_imp, mask)
    cont = np.array([not v.is_categorical for v in x_true.schema])
    sel = mask & cont[np.newaxis, :]
    if not sel.any():
        raise ValueError("no continuous masked cells")
    truth = x_true.values[sel]
    imputed = x_imp.values[sel]
    var = float(np.var(truth))
    if var == 0.0:
        raise ValueError("degenerate truth: zero variance at masked cells")
    return math.sqrt(float(np.mean((truth - imputed) ** 2)) / var)


def pfc(x_true: MixedMatrix, x_imp: MixedMatrix, mask: np.ndarray) -> float:
    """Fraction of masked categorical cells imputed with the wrong level."""
    mask = _check_metric_inputs(x_true, x_imp, mask)
    cat = np.array([v.is_categorical for v in x_true.schema])
    sel = mask & cat[np.newaxis, :]
    if not sel.any():
        raise ValueError("no categorical masked cells")
    return float(np.mean(x_true.values[sel] != x_imp.values[sel]))


def wilcoxon_paired(a: Sequence[float], b: Sequence[float]) -> float:
    """One-sided paired Wilcoxon signed-rank p-value for the alternative
    "a tends to exceed b".

    Zero differences are dropped; tied absolute differences get average
    ranks.  The null distribution is exact (full enumeration via dynamic
    programming) for up to 20 effective pairs, and a normal approximation
    with tie and continuity corrections beyond that.  All differences zero
    returns 1.0."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("paired samples must be 1-d and equal length")
    if a.size < 5:
        raise ValueError("need at least 5 pairs")
    d = a - b
    d = d[d != 0.0]
    n = d.size
    if n == 0:
        return 1.0
    ranks = rankdata(np.abs(d))
    w_plus = float(ranks[d > 0].sum())
    if n <= EXACT_WILCOXON_LIMIT:
        # average ranks are multiples of 1/2, so doubled ranks are integers
        # and the subset-sum table stays exact
        doubled = np.rint(2 * ranks).astype(np.int64)
        total = int(doubled.sum())
        counts = np.zeros(total + 1, dtype=np.int64)
        counts[0] = 1
        for r in doubled:
            counts[r:] += counts[: total + 1 - r].copy()
        threshold = int(round(2 * w_plus))
        exceed = int(counts[threshold:].sum())
        return exceed / float(2**n)
    mean = n * (n + 1) / 4.0
    _, tie_counts = np.unique(ranks, return_counts=True)
    tie_term = float(((tie_counts**3 - tie_counts)).sum()) / 48.0
    var = n * (n + 1) * (2 * n + 1) / 24.0 - tie_term
    z = (w_plus - mean - 0.5) / math.sqrt(var)
    p = 0.5 * math.erfc(z / math.sqrt(2))
    return min(1.0, max(p, 1e-300))


# ---------------------------------------------------------------------------
# Benchmark runner
# ---------------------------------------------------------------------------

def _mean_se(values: list[float | None]) -> tuple[float | None, float | None]:
    present = [v for v in values if v is not None]
    if not present:
        return None, None
    mean = float(np.mean(present))
    if len(present) < 2:
        return mean, None
    se = float(np.std(present, ddof=1) / math.sqrt(len(present)))
    return mean, se


@dataclass(frozen=True)
class BenchmarkReport:
    """Per-method, per-fraction error distributions plus Wilcoxon tests."""

    config: dict
    results: dict
    summary: dict
    wilcoxon: dict
    errors: tuple[dict, ...]

    def to_json(self) -> str:
        doc = {
            "config": self.config,
            "results": self.results,
            "summary": self.summary,
            "wilcoxon": self.wilcoxon,
            "errors": list(self.errors),
        }
        return json.dumps(doc, sort_keys=True, indent=2)

    def to_csv(self) -> str:
        out = io.StringIO()
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(["method", "fraction", "simulation", "nrmse", "pfc"])
        for method, per_fraction in self.results.items():
            for fraction, cells in per_fraction.items():
                for t in range(len(cells["nrmse"])):
                    writer.writerow([
                        method, fraction, t,
                        _csv_num(cells["nrmse"][t]), _csv_num(cells["pfc"][t]),
                    ])
        return out.getvalue()


def _csv_num(v: float | None) -> str:
    return "" if v is None else repr(v)


def _missforest_params_doc(cfg) -> dict:
    return {
        "n_tree": cfg.forest.n_tree,
        "m_try": cfg.forest.m_try,
        "min_node_regression": cfg.forest.min_node_regression,
        "min_node_classification": cfg.forest.min_node_classification,
        "max_iterations": cfg.max_iterations,
    }


def _impute_with(method, xm, fi, t, seed, mf_config, knn_config, n_threads):
    # imported here: this module hosts the metrics those modules use
    from .knn import knn_impute_mixed
    from .missforest import impute

    if method == "mean_mode":
        return initial_guess(xm)
    if method == "missforest":
        cfg = replace(mf_config, seed=subseed(seed, TAG_FOREST, fi, t))
        return impute(xm, cfg, n_threads=n_threads).imputed
    cfg = replace(knn_config, seed=subseed(seed, TAG_CV, fi, t))
    return knn_impute_mixed(xm, cfg).imputed


def run_benchmark(
    x_true: MixedMatrix,
    methods: Sequence[str],
    fractions: Sequence[float],
    n_simulations: int,
    seed: int,
    mf_config=None,
    knn_config=None,
    n_threads: int = 1,
) -> BenchmarkReport:
    """Impute `n_simulations` masked copies of ``x_true`` per fraction with
    every method (shared mask within a simulation) and collect NRMSE/PFC
    distributions plus one-sided Wilcoxon tests against missforest."""
    from .knn import KnnConfig
    from .missforest import MissForestConfig

    if not x_true.is_complete():
        raise ValueError("benchmark requires complete data")
    methods = list(dict.fromkeys(methods))
    if not methods:
        raise ValueError("no methods requested")
    for m in methods:
        if m not in KNOWN_METHODS:
            raise ValueError(f"unknown method {m!r}")
    fractions = [float(f) for f in fractions]
    if not fractions:
        raise ValueError("no fractions requested")
    if n_simulations < 1:
        raise ValueError("n_simulations must be >= 1")
    mf_config = mf_config if mf_config is not None else MissForestConfig()
    knn_config = knn_config if knn_config is not None else KnnConfig()

    has_cont = any(not v.is_categorical for v in x_true.schema)
    has_cat = any(v.is_categorical for v in x_true.schema)
    results = {
        m: {str(f): {"nrmse": [], "pfc": []} for f in fractions} for m in methods
    }
    errors: list[dict] = []

    for fi, fraction in enumerate(fractions):
        for t in range(n_simulations):
            spec = MissingnessSpec(fraction, subseed(seed, TAG_MASK, fi, t))
            xm, mask = inject_mcar(x_true, spec)
            for method in methods:
                cell = results[method][str(fraction)]
                try:
                    imputed = _impute_with(
                        method, xm, fi, t, seed, mf_config, knn_config, n_threads
                    )
                except Exception as exc:  # recorded, not fatal to other methods
                    errors.append({
                        "method": method, "fraction": str(fraction),
                        "simulation": t, "message": str(exc),
                    })
                    cell["nrmse"].append(None)
                    cell["pfc"].append(None)
                    continue
                cell["nrmse"].append(
                    _try_metric(nrmse, x_true, imputed, mask) if has_cont else None
                )
                cell["pfc"].append(
                    _try_metric(pfc, x_true, imputed, mask) if has_cat else None
                )

    summary = {}
    for method in methods:
        summary[method] = {}
        for f in fractions:
            cell = results[method][str(f)]
            n_mean, n_se = _mean_se(cell["nrmse"])
            p_mean, p_se = _mean_se(cell["pfc"])
            summary[method][str(f)] = {
                "nrmse_mean": n_mean, "nrmse_se": n_se,
                "pfc_mean": p_mean, "pfc_se": p_se,
            }

    tests = {}
    if "missforest" in methods:
        for method in methods:
            if method == "missforest":
                continue
            tests[method] = {}
            for f in fractions:
                cell = results[method][str(f)]
                base = results["missforest"][str(f)]
                entry = {}
                for metric in ("nrmse", "pfc"):
                    pairs = [
                        (u, v)
                        for u, v in zip(cell[metric], base[metric])
                        if u is not None and v is not None
                    ]
                    if len(pairs) >= 5:
                        comp = [u for u, _ in pairs]
                        mf = [v for _, v in pairs]
                        entry[metric] = wilcoxon_paired(comp, mf)
                    else:
                        entry[metric] = None
                tests[method][str(f)] = entry
    wilcoxon = {
        "alternative": "comparator error exceeds missforest error",
        "tests": tests,
    }

    config = {
        "methods": methods,
        "fractions": [str(f) for f in fractions],
        "n_simulations": n_simulations,
        "seed": seed,
        "missforest": _missforest_params_doc(mf_config),
        "knn": {
            "k_candidates": list(knn_config.k_candidates),
            "n_validation_sets": knn_config.n_validation_sets,
            "cv_missing_fraction": knn_config.cv_missing_fraction,
        },
    }
    return BenchmarkReport(
        config=config, results=results, summary=summary,
        wilcoxon=wilcoxon, errors=tuple(errors),
    )


def _try_metric(fn, x_true, imputed, mask):
    try:
        return fn(x_true, imputed, mask)
    except ValueError:
        return None


# ---------------------------------------------------------------------------
# ntree x mtry sweep
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SweepReport:
    """Grid of imputation error and runtime per (n_tree, m_try).

    Runtimes are kept in memory and in the CSV; the JSON document omits
    them so that identical seeds yield byte-identical JSON."""

    config: dict
    cells: dict
    runtimes: dict

    def to_json(self) -> str:
        doc = {"config": self.config, "cells": self.cells}
        return json.dumps(doc, sort_keys=True, indent=2)

    def to_csv(self) -> str:
        out = io.StringIO()
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(
            ["n_tree", "m_try", "simulation", "nrmse", "pfc", "runtime_seconds"]
        )
        for nt_key, per_mtry in self.cells.items():
            for mt_key, cell in per_mtry.items():
                for t in range(len(cell["nrmse"])):
                    writer.writerow([
                        nt_key, mt_key, t,
                        _csv_num(cell["nrmse"][t]), _csv_num(cell["pfc"][t]),
                        repr(self.runtimes[nt_key][mt_key][t]),
                    ])
        return out.getvalue()

    def mean_runtime(self, n_tree: int, m_try: int) -> float:
        return float(np.mean(self.runtimes[str(n_tree)][str(m_try)]))


def run_sweep(
    x_true: MixedMatrix,
    fraction: float,
    n_tree_axis: Sequence[int],
    m_try_axis: Sequence[int],
    n_simulations: int,
    seed: int,
    mf_config=None,
    n_threads: int = 1,
) -> SweepReport:
    """missforest error/runtime over an (n_tree, m_try) grid; within one
    simulation every grid cell reuses the same mask and forest seed."""
    from .missforest import MissForestConfig, impute

    if not x_true.is_complete():
        raise ValueError("sweep requires complete data")
    n_tree_axis = [int(v) for v in n_tree_axis]
    m_try_axis = [int(v) for v in m_try_axis]
    if not n_tree_axis or not m_try_axis:
        raise ValueError("sweep axes must be non-empty")
    if min(n_tree_axis) < 1:
        raise ValueError("n_tree values must be >= 1")
    p_pred = x_true.p - 1
    if min(m_try_axis) < 1 or max(m_try_axis) > p_pred:
        raise ValueError(
            f"m_try values must lie in [1, {p_pred}] for {x_true.p} columns"
        )
    if n_simulations < 1:
        raise ValueError("n_simulations must be >= 1")
    mf_config = mf_config if mf_config is not None else MissForestConfig()

    has_cont = any(not v.is_categorical for v in x_true.schema)
    has_cat = any(v.is_categorical for v in x_true.schema)
    cells = {
        str(nt): {str(mt): {"nrmse": [], "pfc": []} for mt in m_try_axis}
        for nt in n_tree_axis
    }
    runtimes = {
        str(nt): {str(mt): [] for mt in m_try_axis} for nt in n_tree_axis
    }

    for t in range(n_simulations):
        spec = MissingnessSpec(fraction, subseed(seed, TAG_MASK, 0, t))
        xm, mask = inject_mcar(x_true, spec)
        forest_seed = subseed(seed, TAG_FOREST, 0, t)
        for nt in n_tree_axis:
            for mt in m_try_axis:
                cfg = replace(
                    mf_config,
                    forest=replace(mf_config.forest, n_tree=nt, m_try=mt),
                    seed=forest_seed,
                )
                start = time.perf_counter()
                outcome = impute(xm, cfg, n_threads=n_threads)
                elapsed = time.perf_counter() - start
                cell = cells[str(nt)][str(mt)]
                cell["nrmse"].append(
                    _try_metric(nrmse, x_true, outcome.imputed, mask)
                    if has_cont else None
                )
                cell["pfc"].append(
                    _try_metric(pfc, x_true, outcome.imputed, mask)
                    if has_cat else None
                )
                runtimes[str(nt)][str(mt)].append(elapsed)

    for nt in n_tree_axis:
        for mt in m_try_axis:
            cell = cells[str(nt)][str(mt)]
            n_mean, _ = _mean_se(cell["nrmse"])
            p_mean, _ = _mean_se(cell["pfc"])
            cell["nrmse_mean"] = n_mean
            cell["pfc_mean"] = p_mean

    config = {
        "fraction": str(float(fraction)),
        "n_tree_axis": n_tree_axis,
        "m_try_axis": m_try_axis,
        "n_simulations": n_simulations,
        "seed": seed,
        "missforest": _missforest_params_doc(mf_config),
    }
    return SweepReport(config=config, cells=cells, runtimes=runtimes)
