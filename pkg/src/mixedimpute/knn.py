"""K-nearest-variables imputation with cross-validated choice of k.

The imputer fills a missing cell from the k columns nearest to the target
column (RMS distance over co-observed rows), weighting their row values by
inverse distance.  Mixed data goes through dummy coding and
standardization first, and k is chosen by injecting artificial missing
cells into a mean-completed copy and scoring each candidate k against the
held-out truth.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._rng import TAG_CV, substream
from .data import (
    DummyLayout,
    MixedMatrix,
    StandardizeParams,
    dummy_decode,
    dummy_encode,
    initial_guess,
    retransform,
    standardize,
)
from .evaluation import nrmse, pfc

__all__ = ["KnnConfig", "KnnOutcome", "knn_impute_continuous", "cv_select_k",
           "knn_impute_mixed"]

# guard against division by zero for exact-duplicate neighbors
DISTANCE_EPS = 1e-9


@dataclass(frozen=True)
class KnnConfig:
    k_candidates: tuple[int, ...] = tuple(range(1, 16))
    n_validation_sets: int = 5
    cv_missing_fraction: float = 0.1
    seed: int = 0

    def __post_init__(self) -> None:
        if not self.k_candidates or min(self.k_candidates) < 1:
            raise ValueError("k_candidates must be positive integers")
        if self.n_validation_sets < 1:
            raise ValueError("n_validation_sets must be >= 1")
        if not 0.0 < self.cv_missing_fraction < 1.0:
            raise ValueError("cv_missing_fraction must lie in (0, 1)")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")


@dataclass(frozen=True)
class KnnOutcome:
    """Imputed matrix plus the cross-validation record behind k_best.

    ``cv_errors[i, t]`` is the CV error of ``k_values[i]`` on validation
    set t.  A complete input skips CV; k_best is None and cv_errors empty.
    """

    imputed: MixedMatrix
    k_best: int | None
    k_values: tuple[int, ...]
    cv_errors: np.ndarray


def _column_stats(x: MixedMatrix) -> tuple[np.ndarray, np.ndarray]:
    """Per-column observed mean and a flag for constant/degenerate columns."""
    means = np.zeros(x.p)
    constant = np.zeros(x.p, dtype=bool)
    for j in range(x.p):
        obs = x.values[~x.mask[:, j], j]
        if obs.size == 0:
            raise ValueError(
                f"column {x.schema[j].name!r} has no observed values"
            )
        means[j] = obs.mean()
        constant[j] = obs.max() == obs.min()
    return means, constant


def _variable_distances(x: MixedMatrix) -> tuple[np.ndarray, np.ndarray]:
    """RMS distance between every pair of columns over co-observed rows.

    Returns (dist, valid); pairs with no co-observed rows are invalid."""
    observed = (~x.mask).astype(np.float64)
    filled = np.where(x.mask, 0.0, x.values)
    n_co = observed.T @ observed
    cross = filled.T @ filled
    sq = (filled**2).T @ observed    # sum of x_j^2 over rows where both seen
    d2 = sq + sq.T - 2.0 * cross
    valid = n_co > 0
    dist = np.zeros_like(d2)
    np.divide(d2, n_co, out=dist, where=valid)
    np.clip(dist, 0.0, None, out=dist)   # guard tiny negative round-off
    return np.sqrt(dist), valid


def knn_impute_continuous(x: MixedMatrix, k: int) -> MixedMatrix:
    """Impute every missing cell from its k nearest observed columns.

    Distances are RMS over co-observed rows; weights are 1/(d + 1e-9).
    Candidate neighbors for cell (i, j) are columns observed at row i,
    excluding constant columns and columns sharing no observed rows with
    j.  Fewer than k candidates means all are used; none at all falls back
    to the column mean."""
    if any(v.is_categorical for v in x.schema):
        raise ValueError("knn_impute_continuous expects continuous columns only")
    if k < 1:
        raise ValueError("k must be >= 1")
    if k >= x.p:
        raise ValueError(f"k={k} must be smaller than the {x.p} columns")
    if x.is_complete():
        return x
    means, constant = _column_stats(x)
    dist, valid = _variable_distances(x)
    values = x.values.copy()
    observed = ~x.mask
    col_ids = np.arange(x.p)
    for i, j in np.argwhere(x.mask):
        cand = col_ids[
            (col_ids != j) & observed[i] & valid[j] & ~constant
        ]
        if cand.size == 0:
            values[i, j] = means[j]
            continue
        d = dist[j, cand]
        order = np.argsort(d, kind="stable")[: min(k, cand.size)]
        chosen = cand[order]
        w = 1.0 / (d[order] + DISTANCE_EPS)
        values[i, j] = float(np.dot(w, x.values[i, chosen]) / w.sum())
    return MixedMatrix(values, np.zeros_like(x.mask), x.schema)


def _filtered_candidates(cfg: KnnConfig, p_encoded: int) -> list[int]:
    """Ascending deduplicated candidates satisfying k < width of the
    encoded matrix."""
    ks = sorted(set(cfg.k_candidates))
    valid = [k for k in ks if k < p_encoded]
    if not valid:
        raise ValueError(
            f"no usable k: all candidates exceed the {p_encoded - 1} "
            "available neighbor columns"
        )
    return valid


def _mask_in_encoded(
    inj_mask: np.ndarray, layout: DummyLayout
) -> np.ndarray:
    """Expand an original-space cell mask to the encoded column blocks."""
    n = inj_mask.shape[0]
    out = np.zeros((n, layout.encoded_width), dtype=bool)
    for j, block in enumerate(layout.blocks):
        for c in block:
            out[:, c] = inj_mask[:, j]
    return out


def _cv_error(
    x_cv: MixedMatrix, imputed: MixedMatrix, inj_mask: np.ndarray
) -> float:
    """Unweighted mean of NRMSE and PFC over the injected cells, using
    whichever of the two applies."""
    parts = []
    cont = np.array([not v.is_categorical for v in x_cv.schema])
    if (inj_mask & cont[np.newaxis, :]).any():
        try:
            parts.append(nrmse(x_cv, imputed, inj_mask))
        except ValueError:
            pass   # degenerate truth at the injected cells; skip the term
    if (inj_mask & ~cont[np.newaxis, :]).any():
        parts.append(pfc(x_cv, imputed, inj_mask))
    if not parts:
        raise ValueError("cross-validation error undefined for this draw")
    return float(np.mean(parts))


def cv_select_k(x: MixedMatrix, cfg: KnnConfig) -> tuple[int, np.ndarray, tuple[int, ...]]:
    """Choose k by cross-validation on a mean-completed copy of ``x``.

    Builds X_cv by mean/mode imputation, then for each of the l validation
    sets injects artificial missing cells into originally observed
    positions (deterministic per (seed, t)) and scores every candidate k
    by re-imputing them.  Returns (k_best, cv_errors, k_values) with
    cv_errors[i, t] the error of k_values[i] on set t; ties in the mean
    error go to the smallest k."""
    x_cv = initial_guess(x)
    enc_cv, layout = dummy_encode(x_cv)
    std_cv, sparams = standardize(enc_cv)
    k_values = _filtered_candidates(cfg, enc_cv.p)

    obs_cells = np.argwhere(~x.mask)
    n_inject = int(round(cfg.cv_missing_fraction * obs_cells.shape[0]))
    if n_inject < 1:
        raise ValueError("not enough observed cells to inject for CV")

    l = cfg.n_validation_sets
    cv_errors = np.zeros((len(k_values), l))
    for t in range(l):
        rng = substream(cfg.seed, TAG_CV, t)
        inj_mask = _draw_cv_mask(x, obs_cells, n_inject, rng)
        enc_mask = _mask_in_encoded(inj_mask, layout)
        std_values = std_cv.values.copy()
        std_values[enc_mask] = np.nan
        std_t = MixedMatrix(std_values, enc_mask, std_cv.schema)
        for ki, k in enumerate(k_values):
            filled = knn_impute_continuous(std_t, k)
            mixed = dummy_decode(retransform(filled, sparams), layout)
            cv_errors[ki, t] = _cv_error(x_cv, mixed, inj_mask)

    mean_per_k = cv_errors.mean(axis=1)
    k_best = k_values[int(np.argmin(mean_per_k))]
    return k_best, cv_errors, tuple(k_values)


def _draw_cv_mask(
    x: MixedMatrix, obs_cells: np.ndarray, n_inject: int, rng: np.random.Generator
) -> np.ndarray:
    """Uniform draw of artificial cells that keeps every column partly
    observed (redrawn up to 1000 times)."""
    for _ in range(1000):
        sel = rng.choice(obs_cells.shape[0], size=n_inject, replace=False)
        inj_mask = np.zeros(x.mask.shape, dtype=bool)
        inj_mask[obs_cells[sel, 0], obs_cells[sel, 1]] = True
        remaining = ~x.mask & ~inj_mask
        if remaining.sum(axis=0).min() >= 1:
            return inj_mask
    raise RuntimeError("cannot satisfy column coverage after 1000 CV draws")


def _impute_fixed_k(x: MixedMatrix, k: int) -> MixedMatrix:
    """Dummy-code, standardize, KNN-impute with fixed k, retransform,
    decode, and restore the observed cells exactly."""
    enc, layout = dummy_encode(x)
    std, sparams = standardize(enc)
    filled = knn_impute_continuous(std, k)
    decoded = dummy_decode(retransform(filled, sparams), layout)
    values = np.where(x.mask, decoded.values, x.values)
    return MixedMatrix(values, np.zeros_like(x.mask), x.schema)


def knn_impute_mixed(x: MixedMatrix, cfg: KnnConfig = KnnConfig()) -> KnnOutcome:
    """Cross-validated KNN imputation for mixed data.

    Runs cv_select_k, then imputes the original missing cells through the
    dummy/standardize pipeline with the chosen k.  A complete input is
    returned unchanged without running CV."""
    if x.is_complete():
        return KnnOutcome(x, None, (), np.empty((0, 0)))
    for j, var in enumerate(x.schema):
        if x.mask[:, j].all():
            raise ValueError(f"column {var.name!r} has no observed values")
    k_best, cv_errors, k_values = cv_select_k(x, cfg)
    imputed = _impute_fixed_k(x, k_best)
    return KnnOutcome(imputed, k_best, k_values, cv_errors)
