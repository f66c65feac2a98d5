"""Iterative random-forest imputation for mixed-type data.

Starting from a mean/mode guess, columns are revisited in order of
ascending missingness; each gets a fresh forest fit on its observed rows
and predictions written back immediately, so later columns in a sweep see
the updated values.  After every sweep the relative change of the imputed
matrix is measured per variable type; the loop stops the first time the
change increases for all types present, and the matrix from just before
that degradation is returned, together with out-of-bag error estimates
from the same sweep.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from . import forest as rf
from ._rng import TAG_FOREST, subseed
from .data import MixedMatrix, Variable, initial_guess, missingness_order, partition
from .forest import ForestParams

__all__ = [
    "MissForestConfig",
    "DeltaRecord",
    "ImputationOutcome",
    "impute",
    "delta_continuous",
    "delta_categorical",
    "stopping_fired",
    "aggregate_oob",
]


@dataclass(frozen=True)
class MissForestConfig:
    forest: ForestParams = field(default_factory=ForestParams)
    max_iterations: int = 10
    seed: int = 0

    def __post_init__(self) -> None:
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")


@dataclass(frozen=True)
class DeltaRecord:
    """Between-sweep change; a field is None when its type has no missing
    cells."""

    delta_n: float | None
    delta_f: float | None


@dataclass(frozen=True)
class ImputationOutcome:
    imputed: MixedMatrix
    iterations_run: int
    trace: tuple[DeltaRecord, ...]
    oob_nrmse: float | None
    oob_pfc: float | None
    per_variable_oob: dict[str, float]

    def to_json(self) -> str:
        doc = {
            "iterations": self.iterations_run,
            "delta_trace": [
                {"delta_n": r.delta_n, "delta_f": r.delta_f} for r in self.trace
            ],
            "oob_nrmse": self.oob_nrmse,
            "oob_pfc": self.oob_pfc,
            "per_variable_oob": self.per_variable_oob,
        }
        return json.dumps(doc, sort_keys=True)


def delta_continuous(x_new: MixedMatrix, x_old: MixedMatrix) -> float:
    """Relative change over continuous columns:
    sum((new-old)^2) / sum(new^2), summed over all their cells.

    A zero denominator returns 0 when nothing changed, else +inf (treated
    as an increase by the stopping rule)."""
    if x_new.values.shape != x_old.values.shape or x_new.schema != x_old.schema:
        raise ValueError("matrices differ in shape or schema")
    cont = [j for j, v in enumerate(x_new.schema) if not v.is_categorical]
    if not cont:
        raise ValueError("no continuous columns")
    new = x_new.values[:, cont]
    old = x_old.values[:, cont]
    num = float(((new - old) ** 2).sum())
    den = float((new**2).sum())
    if den == 0.0:
        return 0.0 if num == 0.0 else math.inf
    return num / den


def delta_categorical(
    x_new: MixedMatrix, x_old: MixedMatrix, n_missing_categorical: int
) -> float:
    """Fraction of categorical cells that changed level between sweeps,
    relative to the number of originally missing categorical cells."""
    if x_new.values.shape != x_old.values.shape or x_new.schema != x_old.schema:
        raise ValueError("matrices differ in shape or schema")
    cat = [j for j, v in enumerate(x_new.schema) if v.is_categorical]
    if not cat:
        raise ValueError("no categorical columns")
    if n_missing_categorical < 1:
        raise ValueError("n_missing_categorical must be >= 1")
    changed = int((x_new.values[:, cat] != x_old.values[:, cat]).sum())
    return changed / n_missing_categorical


def stopping_fired(trace: Sequence[DeltaRecord]) -> bool:
    """True when the latest sweep's change strictly exceeds the previous
    sweep's for every variable type present."""
    if len(trace) < 2:
        return False
    last, prev = trace[-1], trace[-2]
    checks = []
    if last.delta_n is not None:
        checks.append(last.delta_n > prev.delta_n)
    if last.delta_f is not None:
        checks.append(last.delta_f > prev.delta_f)
    return bool(checks) and all(checks)


def aggregate_oob(
    per_variable: Mapping[str, float], schema: Sequence[Variable]
) -> tuple[float | None, float | None]:
    """Unweighted mean OOB error within each variable type."""
    by_name = {v.name: v for v in schema}
    cont = [err for name, err in per_variable.items() if not by_name[name].is_categorical]
    cat = [err for name, err in per_variable.items() if by_name[name].is_categorical]
    oob_nrmse = float(np.mean(cont)) if cont else None
    oob_pfc = float(np.mean(cat)) if cat else None
    return oob_nrmse, oob_pfc


def _sweep_deltas(
    new_values: np.ndarray,
    old_values: np.ndarray,
    x: MixedMatrix,
    has_cont: bool,
    has_cat: bool,
    n_mis_cat: int,
) -> DeltaRecord:
    new_m = MixedMatrix(new_values, np.zeros_like(x.mask), x.schema)
    old_m = MixedMatrix(old_values, np.zeros_like(x.mask), x.schema)
    dn = delta_continuous(new_m, old_m) if has_cont else None
    df = delta_categorical(new_m, old_m, n_mis_cat) if has_cat else None
    return DeltaRecord(dn, df)


def impute(
    x: MixedMatrix, cfg: MissForestConfig = MissForestConfig(), n_threads: int = 1
) -> ImputationOutcome:
    """Impute every missing cell of ``x``; observed cells pass through."""
    if x.p < 2:
        raise ValueError("imputation needs at least 2 columns")
    counts = x.missing_per_column()
    for j, var in enumerate(x.schema):
        if counts[j] == x.n:
            raise ValueError(f"column {var.name!r} has no observed values")
    targets = [s for s in missingness_order(x) if counts[s] > 0]
    if not targets:
        return ImputationOutcome(x, 0, (), None, None, {})

    has_cont = any(not x.schema[s].is_categorical for s in targets)
    has_cat = any(x.schema[s].is_categorical for s in targets)
    cat_cols = [j for j, v in enumerate(x.schema) if v.is_categorical]
    n_mis_cat = int(x.mask[:, cat_cols].sum()) if cat_cols else 0

    work_values = initial_guess(x).values.copy()
    no_mask = np.zeros_like(x.mask)
    trace: list[DeltaRecord] = []
    prev_oob: dict[str, float] = {}
    prev_values = work_values.copy()

    iterations = 0
    for sweep in range(1, cfg.max_iterations + 1):
        iterations = sweep
        old_values = work_values.copy()
        sweep_oob: dict[str, float] = {}
        for s in targets:
            var = x.schema[s]
            work = MixedMatrix(work_values, no_mask, x.schema)
            part = partition(work, x.mask, s)
            params = replace(cfg.forest, seed=subseed(cfg.seed, TAG_FOREST, sweep, s))
            try:
                model = rf.fit(part.x_obs, part.y_obs, var, params, n_threads)
            except ValueError as exc:
                raise ValueError(f"column {var.name!r}: {exc}") from exc
            preds = rf.predict(model, part.x_mis)
            if not var.is_categorical and preds.size:
                lo, hi = part.y_obs.min(), part.y_obs.max()
                slack = 1e-9 * max(1.0, abs(hi - lo))
                assert preds.min() >= lo - slack and preds.max() <= hi + slack, (
                    "forest prediction escaped the observed response range"
                )
            work_values[part.rows_mis, s] = preds
            sweep_oob[var.name] = rf.oob_error(model, part.x_obs, part.y_obs)

        trace.append(
            _sweep_deltas(work_values, old_values, x, has_cont, has_cat, n_mis_cat)
        )
        if stopping_fired(trace):
            # the new matrix got worse; keep the previous sweep's result
            final_values = old_values
            final_oob = prev_oob
            break
        prev_values = work_values.copy()
        prev_oob = sweep_oob
    else:
        final_values = prev_values
        final_oob = prev_oob

    oob_nrmse, oob_pfc = aggregate_oob(final_oob, x.schema)
    imputed = MixedMatrix(final_values, no_mask, x.schema)
    return ImputationOutcome(
        imputed=imputed,
        iterations_run=iterations,
        trace=tuple(trace),
        oob_nrmse=oob_nrmse,
        oob_pfc=oob_pfc,
        per_variable_oob=final_oob,
    )
