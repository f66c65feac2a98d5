"""Mixed-type data matrix and the transformations the imputers rely on.

A :class:`MixedMatrix` stores an ``n x p`` table whose columns are either
continuous or categorical.  All cells live in one float64 array: continuous
cells hold their value, categorical cells hold the integer index of their
level, and missing cells hold NaN.  A boolean mask of the same shape is the
authoritative record of missingness.

The module also provides CSV parsing/writing with type inference, the
mean/mode starting guess, missingness ordering, per-column regression
partitions, standardization, and {-1, +1} dummy coding for categorical
variables.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import IO, Iterable, Sequence

import numpy as np

__all__ = [
    "VariableKind",
    "Variable",
    "MixedMatrix",
    "parse_csv",
    "write_csv",
    "load_schema",
    "dump_schema",
    "initial_guess",
    "missingness_order",
    "VariablePartition",
    "partition",
    "StandardizeParams",
    "standardize",
    "retransform",
    "DummyLayout",
    "dummy_encode",
    "dummy_decode",
]


class VariableKind(Enum):
    CONTINUOUS = "continuous"
    CATEGORICAL = "categorical"


@dataclass(frozen=True)
class Variable:
    """Name and type of one column; categorical variables carry their levels."""

    name: str
    kind: VariableKind
    levels: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        if not self.name:
            raise ValueError("variable name must be non-empty")
        if self.kind is VariableKind.CATEGORICAL:
            if self.levels is None or len(self.levels) < 2:
                raise ValueError(
                    f"categorical variable {self.name!r} needs at least 2 levels"
                )
            if len(set(self.levels)) != len(self.levels):
                raise ValueError(f"duplicate levels in variable {self.name!r}")
        elif self.levels is not None:
            raise ValueError(f"continuous variable {self.name!r} cannot have levels")

    @property
    def is_categorical(self) -> bool:
        return self.kind is VariableKind.CATEGORICAL

    @property
    def n_levels(self) -> int:
        return len(self.levels) if self.levels is not None else 0


def _freeze(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class MixedMatrix:
    """Immutable mixed-type matrix; ``mask`` is True where a cell is missing."""

    values: np.ndarray
    mask: np.ndarray
    schema: tuple[Variable, ...]

    def __post_init__(self) -> None:
        values = np.array(self.values, dtype=np.float64, copy=True)
        mask = np.array(self.mask, dtype=bool, copy=True)
        if values.ndim != 2:
            raise ValueError("values must be a 2-d array")
        if mask.shape != values.shape:
            raise ValueError("mask shape does not match values shape")
        if len(self.schema) != values.shape[1]:
            raise ValueError("schema length does not match number of columns")
        schema = tuple(self.schema)
        names = [v.name for v in schema]
        if len(set(names)) != len(names):
            raise ValueError("duplicate column names in schema")
        if not np.all(np.isnan(values[mask])):
            raise ValueError("masked cells must hold NaN")
        observed = values[~mask]
        if not np.all(np.isfinite(observed)):
            raise ValueError("observed cells must be finite")
        for j, var in enumerate(schema):
            if not var.is_categorical:
                continue
            col = values[:, j][~mask[:, j]]
            if col.size and (np.any(col != np.floor(col)) or np.any(col < 0)
                             or np.any(col >= var.n_levels)):
                raise ValueError(
                    f"column {var.name!r} holds codes outside its level range"
                )
        object.__setattr__(self, "values", _freeze(values))
        object.__setattr__(self, "mask", _freeze(mask))
        object.__setattr__(self, "schema", schema)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def p(self) -> int:
        return self.values.shape[1]

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(v.name for v in self.schema)

    @property
    def n_missing(self) -> int:
        return int(self.mask.sum())

    def missing_per_column(self) -> np.ndarray:
        return self.mask.sum(axis=0)

    def is_complete(self) -> bool:
        return not self.mask.any()

    def replace_values(self, values: np.ndarray, mask: np.ndarray | None = None) -> "MixedMatrix":
        """Return a copy with new cell contents (and optionally a new mask)."""
        return MixedMatrix(values, self.mask if mask is None else mask, self.schema)


# ---------------------------------------------------------------------------
# CSV round trip
# ---------------------------------------------------------------------------

def _parse_float(token: str) -> float | None:
    try:
        value = float(token)
    except ValueError:
        return None
    return value if math.isfinite(value) else None


def parse_csv(
    source: str | IO[str],
    na_token: str = "NA",
    schema: Sequence[Variable] | None = None,
) -> MixedMatrix:
    """Parse a headered CSV into a :class:`MixedMatrix`.

    Without a schema, a column is continuous when every observed cell parses
    as a finite number, otherwise categorical with levels in order of first
    appearance.  With a schema, cells are validated against it.

    Raises :class:`ValueError` on ragged rows (with the offending line
    number), unknown levels, non-numeric cells in continuous columns,
    columns with no observed value, or inferred categoricals with fewer
    than two distinct levels.
    """
    handle = io.StringIO(source) if isinstance(source, str) else source
    reader = csv.reader(handle)
    try:
        header = next(reader)
    except StopIteration:
        raise ValueError("empty input: no header row") from None
    names = [h.strip() for h in header]
    if any(not n for n in names):
        raise ValueError("empty column name in header")
    if len(set(names)) != len(names):
        raise ValueError("duplicate column names in header")
    p = len(names)

    if schema is not None:
        schema = tuple(schema)
        if tuple(v.name for v in schema) != tuple(names):
            raise ValueError("schema column names do not match CSV header")

    cells: list[list[str | None]] = []
    for row in reader:
        if len(row) != p:
            raise ValueError(
                f"line {reader.line_num}: expected {p} fields, got {len(row)}"
            )
        cells.append([None if c.strip() == na_token else c.strip() for c in row])
    n = len(cells)

    if schema is None:
        inferred: list[Variable] = []
        for j, name in enumerate(names):
            observed = [row[j] for row in cells if row[j] is not None]
            if not observed:
                raise ValueError(f"column {name!r} has no observed values")
            if all(_parse_float(tok) is not None for tok in observed):
                inferred.append(Variable(name, VariableKind.CONTINUOUS))
            else:
                levels: list[str] = []
                for tok in observed:
                    if tok not in levels:
                        levels.append(tok)
                if len(levels) < 2:
                    raise ValueError(
                        f"column {name!r} is categorical with fewer than 2 "
                        "observed levels"
                    )
                inferred.append(Variable(name, VariableKind.CATEGORICAL, tuple(levels)))
        schema = tuple(inferred)

    values = np.full((n, p), np.nan)
    mask = np.zeros((n, p), dtype=bool)
    level_index = {
        j: {lev: i for i, lev in enumerate(var.levels)}
        for j, var in enumerate(schema)
        if var.is_categorical
    }
    for i, row in enumerate(cells):
        for j, tok in enumerate(row):
            if tok is None:
                mask[i, j] = True
                continue
            var = schema[j]
            if var.is_categorical:
                try:
                    values[i, j] = level_index[j][tok]
                except KeyError:
                    raise ValueError(
                        f"column {var.name!r}: unknown level {tok!r}"
                    ) from None
            else:
                parsed = _parse_float(tok)
                if parsed is None:
                    raise ValueError(
                        f"column {var.name!r}: non-numeric cell {tok!r}"
                    )
                values[i, j] = parsed
    return MixedMatrix(values, mask, schema)


def write_csv(x: MixedMatrix, na_token: str = "NA") -> str:
    """Serialize to CSV text; missing cells become ``na_token``."""
    for var in x.schema:
        if var.is_categorical and na_token in var.levels:
            raise ValueError(
                f"na_token {na_token!r} collides with a level of {var.name!r}"
            )
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(x.names)
    for i in range(x.n):
        row: list[str] = []
        for j, var in enumerate(x.schema):
            if x.mask[i, j]:
                row.append(na_token)
            elif var.is_categorical:
                row.append(var.levels[int(x.values[i, j])])
            else:
                row.append(repr(float(x.values[i, j])))
        writer.writerow(row)
    return out.getvalue()


def dump_schema(schema: Sequence[Variable]) -> str:
    """Serialize a schema to JSON (inverse of :func:`load_schema`)."""
    spec = [
        {"name": v.name, "kind": v.kind.value}
        | ({"levels": list(v.levels)} if v.is_categorical else {})
        for v in schema
    ]
    return json.dumps(spec, indent=2, sort_keys=True)


def load_schema(text: str) -> tuple[Variable, ...]:
    spec = json.loads(text)
    out = []
    for entry in spec:
        kind = VariableKind(entry["kind"])
        levels = tuple(entry["levels"]) if "levels" in entry else None
        out.append(Variable(entry["name"], kind, levels))
    return tuple(out)


# ---------------------------------------------------------------------------
# Starting guess and sweep order
# ---------------------------------------------------------------------------

def initial_guess(x: MixedMatrix) -> MixedMatrix:
    """Fill every missing cell with the column mean (continuous) or the
    most frequent level (categorical, ties to the lowest level index)."""
    values = x.values.copy()
    for j, var in enumerate(x.schema):
        col_mask = x.mask[:, j]
        if not col_mask.any():
            continue
        observed = x.values[~col_mask, j]
        if observed.size == 0:
            raise ValueError(f"column {var.name!r} has no observed values")
        if var.is_categorical:
            counts = np.bincount(observed.astype(np.int64), minlength=var.n_levels)
            fill = float(np.argmax(counts))
        else:
            fill = float(observed.mean())
        values[col_mask, j] = fill
    return MixedMatrix(values, np.zeros_like(x.mask), x.schema)


def missingness_order(x: MixedMatrix) -> list[int]:
    """Column indices sorted by ascending missing count, ties by position."""
    counts = x.missing_per_column()
    return [int(j) for j in np.argsort(counts, kind="stable")]


# ---------------------------------------------------------------------------
# Per-column regression partition
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class VariablePartition:
    """Rows and predictors split by the missingness of one target column.

    ``x_obs``/``x_mis`` drop the target column; ``y_obs`` aligns with the
    rows of ``x_obs`` and ``rows_mis`` gives the original row indices that
    need a prediction.
    """

    target: int
    y_obs: np.ndarray
    rows_obs: np.ndarray
    rows_mis: np.ndarray
    x_obs: MixedMatrix
    x_mis: MixedMatrix


def partition(x: MixedMatrix, mask: np.ndarray, target: int) -> VariablePartition:
    """Split a completed matrix by where ``mask`` marks the target missing."""
    if x.p < 2:
        raise ValueError("need at least 2 columns to build a partition")
    if not x.is_complete():
        raise ValueError("partition expects a completed matrix")
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != x.values.shape:
        raise ValueError("mask shape does not match matrix shape")
    if not 0 <= target < x.p:
        raise ValueError(f"target column {target} out of range")
    rows_mis = np.flatnonzero(mask[:, target])
    rows_obs = np.flatnonzero(~mask[:, target])
    keep = [j for j in range(x.p) if j != target]
    sub_schema = tuple(x.schema[j] for j in keep)
    sub_mask = np.zeros((x.n, len(keep)), dtype=bool)
    x_obs = MixedMatrix(x.values[np.ix_(rows_obs, keep)], sub_mask[rows_obs], sub_schema)
    x_mis = MixedMatrix(x.values[np.ix_(rows_mis, keep)], sub_mask[rows_mis], sub_schema)
    return VariablePartition(
        target=target,
        y_obs=x.values[rows_obs, target].copy(),
        rows_obs=rows_obs,
        rows_mis=rows_mis,
        x_obs=x_obs,
        x_mis=x_mis,
    )


# ---------------------------------------------------------------------------
# Standardization (continuous columns only)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StandardizeParams:
    """Per-column centering/scaling constants captured by :func:`standardize`."""

    means: np.ndarray
    sds: np.ndarray
    constant: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "means", _freeze(np.array(self.means, dtype=np.float64)))
        object.__setattr__(self, "sds", _freeze(np.array(self.sds, dtype=np.float64)))
        object.__setattr__(self, "constant", _freeze(np.array(self.constant, dtype=bool)))


def standardize(x: MixedMatrix) -> tuple[MixedMatrix, StandardizeParams]:
    """Center and scale continuous columns to mean 0, sample sd 1.

    Statistics use observed cells only.  Columns that are categorical,
    constant, or have a single observed value pass through unchanged and
    are flagged in ``params.constant`` (categorical columns are flagged
    too, so the flag means "was not scaled").
    """
    values = x.values.copy()
    means = np.zeros(x.p)
    sds = np.ones(x.p)
    constant = np.ones(x.p, dtype=bool)
    for j, var in enumerate(x.schema):
        if var.is_categorical:
            continue
        observed = x.values[~x.mask[:, j], j]
        if observed.size == 0:
            raise ValueError(f"column {var.name!r} has no observed values")
        if observed.size < 2:
            continue
        sd = float(observed.std(ddof=1))
        if sd == 0.0:
            continue
        mean = float(observed.mean())
        means[j] = mean
        sds[j] = sd
        constant[j] = False
        obs_rows = ~x.mask[:, j]
        values[obs_rows, j] = (x.values[obs_rows, j] - mean) / sd
    return x.replace_values(values), StandardizeParams(means, sds, constant)


def retransform(x: MixedMatrix, params: StandardizeParams) -> MixedMatrix:
    """Invert :func:`standardize` on the scaled columns."""
    if params.means.shape[0] != x.p:
        raise ValueError("params do not match matrix width")
    values = x.values.copy()
    for j in range(x.p):
        if params.constant[j]:
            continue
        obs_rows = ~x.mask[:, j]
        values[obs_rows, j] = x.values[obs_rows, j] * params.sds[j] + params.means[j]
    return x.replace_values(values)


# ---------------------------------------------------------------------------
# Dummy coding
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DummyLayout:
    """Mapping from original columns to their encoded column blocks."""

    schema: tuple[Variable, ...]
    blocks: tuple[tuple[int, ...], ...]

    @property
    def encoded_width(self) -> int:
        return sum(len(b) for b in self.blocks)


def dummy_encode(x: MixedMatrix) -> tuple[MixedMatrix, DummyLayout]:
    """Expand each categorical column with m levels into m columns coded
    -1/+1; continuous columns are copied through.  Missing categorical
    cells become m missing cells."""
    columns: list[np.ndarray] = []
    col_masks: list[np.ndarray] = []
    out_schema: list[Variable] = []
    blocks: list[tuple[int, ...]] = []
    k = 0
    for j, var in enumerate(x.schema):
        if var.is_categorical:
            block = []
            codes = x.values[:, j]
            miss = x.mask[:, j]
            for li, level in enumerate(var.levels):
                col = np.where(codes == li, 1.0, -1.0)
                col[miss] = np.nan
                columns.append(col)
                col_masks.append(miss.copy())
                out_schema.append(Variable(f"{var.name}={level}", VariableKind.CONTINUOUS))
                block.append(k)
                k += 1
            blocks.append(tuple(block))
        else:
            columns.append(x.values[:, j].copy())
            col_masks.append(x.mask[:, j].copy())
            out_schema.append(var)
            blocks.append((k,))
            k += 1
    values = np.column_stack(columns) if columns else np.empty((x.n, 0))
    mask = np.column_stack(col_masks) if col_masks else np.empty((x.n, 0), dtype=bool)
    encoded = MixedMatrix(values, mask, tuple(out_schema))
    return encoded, DummyLayout(x.schema, tuple(blocks))


def dummy_decode(x: MixedMatrix, layout: DummyLayout) -> MixedMatrix:
    """Invert :func:`dummy_encode`; imputed categorical cells take the level
    whose dummy column holds the largest value (ties to the lowest index)."""
    if layout.encoded_width != x.p:
        raise ValueError("layout width does not match encoded matrix")
    n = x.n
    p = len(layout.schema)
    values = np.full((n, p), np.nan)
    mask = np.zeros((n, p), dtype=bool)
    for j, (var, block) in enumerate(zip(layout.schema, layout.blocks)):
        cols = list(block)
        if var.is_categorical:
            if len(cols) != var.n_levels:
                raise ValueError(
                    f"column {var.name!r}: block width {len(cols)} does not "
                    f"match {var.n_levels} levels"
                )
            block_mask = x.mask[:, cols]
            all_missing = block_mask.all(axis=1)
            any_missing = block_mask.any(axis=1)
            if np.any(any_missing & ~all_missing):
                raise ValueError(
                    f"column {var.name!r}: dummy block is partially missing"
                )
            scores = x.values[:, cols]
            rows = ~all_missing
            values[rows, j] = np.argmax(scores[rows], axis=1).astype(np.float64)
            mask[all_missing, j] = True
        else:
            if len(cols) != 1:
                raise ValueError(f"column {var.name!r}: malformed block")
            values[:, j] = x.values[:, cols[0]]
            mask[:, j] = x.mask[:, cols[0]]
    return MixedMatrix(values, mask, layout.schema)
