"""Random forests of unpruned CART trees for mixed-type predictors.

Trees grow on bootstrap samples (size n, with replacement); each node picks
the best split among m_try randomly sampled predictors by variance
reduction (regression) or Gini impurity decrease (classification).  The
per-tree RNG stream is ``seed XOR tree_index``, so training is bit-identical
whether trees are grown serially or in parallel.
"""

from __future__ import annotations

import hashlib
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

from . import _tree_kernels as tk
from .data import MixedMatrix, Variable, VariableKind

__all__ = [
    "Task",
    "ForestParams",
    "Tree",
    "Forest",
    "fit",
    "fit_tree",
    "predict",
    "oob_error",
    "forest_to_json",
    "forest_from_json",
]

# int64 level bitmasks bound the number of categorical levels a predictor
# may have
MAX_FOREST_LEVELS = 63


class Task(Enum):
    REGRESSION = "regression"
    CLASSIFICATION = "classification"


@dataclass(frozen=True)
class ForestParams:
    """Ensemble configuration; ``m_try=None`` resolves to ⌊√p⌋ (min 1)."""

    n_tree: int = 100
    m_try: int | None = None
    min_node_regression: int = 5
    min_node_classification: int = 1
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_tree < 1:
            raise ValueError("n_tree must be >= 1")
        if self.m_try is not None and self.m_try < 1:
            raise ValueError("m_try must be >= 1")
        if self.min_node_regression < 1 or self.min_node_classification < 1:
            raise ValueError("min node sizes must be >= 1")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")

    def resolved_m_try(self, p_pred: int) -> int:
        if self.m_try is None:
            return max(1, int(math.isqrt(p_pred)))
        if self.m_try > p_pred:
            raise ValueError(
                f"m_try={self.m_try} exceeds the {p_pred} available predictors"
            )
        return self.m_try


@dataclass(frozen=True)
class Tree:
    """Flattened binary tree; ``feature[i] == -1`` marks a leaf.

    Categorical splits carry bitmasks of the level indices routed to each
    side; levels unseen at the node (in neither mask) route left.
    """

    feature: np.ndarray
    threshold: np.ndarray
    is_cat_split: np.ndarray
    cat_left: np.ndarray
    cat_right: np.ndarray
    left: np.ndarray
    right: np.ndarray
    leaf_value: np.ndarray
    gain: np.ndarray
    n_node: np.ndarray

    @property
    def n_nodes(self) -> int:
        return self.feature.shape[0]

    def is_leaf(self, node: int) -> bool:
        return self.feature[node] < 0

    def apply(self, x_values: np.ndarray) -> np.ndarray:
        out = np.empty(x_values.shape[0])
        tk.apply_tree(
            x_values, self.feature, self.threshold, self.is_cat_split,
            self.cat_right, self.left, self.right, self.leaf_value, out,
        )
        return out


@dataclass(frozen=True)
class Forest:
    trees: tuple[Tree, ...]
    oob_masks: np.ndarray
    task: Task
    params: ForestParams
    predictor_schema: tuple[Variable, ...]
    response: Variable

    @property
    def n_classes(self) -> int:
        return self.response.n_levels


def _check_training_input(x: MixedMatrix, y: np.ndarray, response: Variable) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    if y.ndim != 1 or y.shape[0] != x.n:
        raise ValueError("response length does not match predictor rows")
    if x.n < 2:
        raise ValueError("need at least 2 rows to fit")
    if not x.is_complete():
        raise ValueError("predictor matrix must be complete")
    if np.any(np.isnan(y)):
        raise ValueError("response must be complete")
    if response.is_categorical:
        if np.any(y != np.floor(y)) or np.any(y < 0) or np.any(y >= response.n_levels):
            raise ValueError("response codes outside the declared levels")
    for var in x.schema:
        if var.is_categorical and var.n_levels > MAX_FOREST_LEVELS:
            raise ValueError(
                f"predictor {var.name!r} has {var.n_levels} levels; "
                f"at most {MAX_FOREST_LEVELS} supported"
            )
    return y


def _grow_one(
    x_values: np.ndarray,
    y: np.ndarray,
    ycode: np.ndarray,
    task: Task,
    n_cls: int,
    is_cat: np.ndarray,
    n_levels: np.ndarray,
    rows: np.ndarray,
    node_rand: np.ndarray,
    m_try: int,
    min_node: int,
) -> Tree:
    max_nodes = 2 * rows.shape[0] + 2
    feature = np.full(max_nodes, -1, dtype=np.int64)
    threshold = np.zeros(max_nodes)
    is_cat_split = np.zeros(max_nodes, dtype=np.uint8)
    cat_left = np.zeros(max_nodes, dtype=np.int64)
    cat_right = np.zeros(max_nodes, dtype=np.int64)
    left = np.zeros(max_nodes, dtype=np.int64)
    right = np.zeros(max_nodes, dtype=np.int64)
    leaf_value = np.zeros(max_nodes)
    gain = np.zeros(max_nodes)
    n_node = np.zeros(max_nodes, dtype=np.int64)
    task_id = tk.TASK_REGRESSION if task is Task.REGRESSION else tk.TASK_CLASSIFICATION
    count = tk.grow_tree(
        x_values, y, ycode, task_id, n_cls, is_cat, n_levels, rows, node_rand,
        m_try, min_node, feature, threshold, is_cat_split, cat_left, cat_right,
        left, right, leaf_value, gain, n_node,
    )
    sl = slice(0, count)
    return Tree(
        feature[sl].copy(), threshold[sl].copy(), is_cat_split[sl].copy(),
        cat_left[sl].copy(), cat_right[sl].copy(), left[sl].copy(),
        right[sl].copy(), leaf_value[sl].copy(), gain[sl].copy(),
        n_node[sl].copy(),
    )


def fit(
    x: MixedMatrix,
    y: np.ndarray,
    response: Variable,
    params: ForestParams,
    n_threads: int = 1,
) -> Forest:
    """Train ``params.n_tree`` trees of y ~ x on bootstrap samples."""
    y = _check_training_input(x, y, response)
    n, p = x.n, x.p
    m_try = params.resolved_m_try(p)
    task = Task.CLASSIFICATION if response.is_categorical else Task.REGRESSION
    min_node = (
        params.min_node_classification
        if task is Task.CLASSIFICATION
        else params.min_node_regression
    )
    x_values = np.ascontiguousarray(x.values)
    is_cat = np.array([v.is_categorical for v in x.schema], dtype=np.uint8)
    n_levels = np.array([v.n_levels for v in x.schema], dtype=np.int64)
    n_cls = response.n_levels if task is Task.CLASSIFICATION else 1
    ycode = (
        y.astype(np.int64) if task is Task.CLASSIFICATION else np.zeros(n, np.int64)
    )

    def build(t: int) -> tuple[Tree, np.ndarray]:
        rng = np.random.default_rng(params.seed ^ t)
        rows = rng.integers(0, n, size=n, dtype=np.int64)
        node_rand = rng.random((2 * n + 2, p))
        tree = _grow_one(
            x_values, y, ycode, task, n_cls, is_cat, n_levels, rows,
            node_rand, m_try, min_node,
        )
        oob = np.ones(n, dtype=bool)
        oob[rows] = False
        return tree, oob

    if n_threads > 1:
        with ThreadPoolExecutor(max_workers=n_threads) as pool:
            built = list(pool.map(build, range(params.n_tree)))
    else:
        built = [build(t) for t in range(params.n_tree)]
    trees = tuple(tree for tree, _ in built)
    oob_masks = np.array([oob for _, oob in built])
    return Forest(
        trees=trees,
        oob_masks=oob_masks,
        task=task,
        params=replace(params, m_try=m_try),
        predictor_schema=x.schema,
        response=response,
    )


def fit_tree(
    x: MixedMatrix, y: np.ndarray, response: Variable, params: ForestParams
) -> Tree:
    """Grow a single tree on all rows (no bootstrap); used for inspection
    and for validating split selection against an exhaustive search."""
    y = _check_training_input(x, y, response)
    n, p = x.n, x.p
    m_try = params.resolved_m_try(p)
    task = Task.CLASSIFICATION if response.is_categorical else Task.REGRESSION
    min_node = (
        params.min_node_classification
        if task is Task.CLASSIFICATION
        else params.min_node_regression
    )
    is_cat = np.array([v.is_categorical for v in x.schema], dtype=np.uint8)
    n_levels = np.array([v.n_levels for v in x.schema], dtype=np.int64)
    n_cls = response.n_levels if task is Task.CLASSIFICATION else 1
    ycode = (
        y.astype(np.int64) if task is Task.CLASSIFICATION else np.zeros(n, np.int64)
    )
    rng = np.random.default_rng(params.seed)
    node_rand = rng.random((2 * n + 2, p))
    return _grow_one(
        np.ascontiguousarray(x.values), y, ycode, task, n_cls, is_cat,
        n_levels, np.arange(n, dtype=np.int64), node_rand, m_try, min_node,
    )


def _check_query(forest: Forest, x: MixedMatrix) -> np.ndarray:
    if x.schema != forest.predictor_schema:
        raise ValueError("query schema does not match training schema")
    if not x.is_complete():
        raise ValueError("query matrix must be complete")
    return np.ascontiguousarray(x.values)


def predict(forest: Forest, x: MixedMatrix) -> np.ndarray:
    """Mean of per-tree predictions (regression) or plurality vote with
    ties to the lowest level index (classification)."""
    xq = _check_query(forest, x)
    nq = x.n
    if nq == 0:
        return np.empty(0)
    if forest.task is Task.REGRESSION:
        acc = np.zeros(nq)
        for tree in forest.trees:
            acc += tree.apply(xq)
        return acc / len(forest.trees)
    votes = np.zeros((nq, forest.n_classes), dtype=np.int64)
    rows = np.arange(nq)
    for tree in forest.trees:
        votes[rows, tree.apply(xq).astype(np.int64)] += 1
    return np.argmax(votes, axis=1).astype(np.float64)


def oob_error(forest: Forest, x: MixedMatrix, y: np.ndarray) -> float:
    """Out-of-bag error: sqrt(MSE_oob / var_pop(y)) for regression,
    misclassification fraction for classification.  Rows never out of bag
    are excluded; a constant response returns 0."""
    xq = _check_query(forest, x)
    y = np.asarray(y, dtype=np.float64)
    if y.shape[0] != x.n:
        raise ValueError("response length does not match predictor rows")
    n = x.n
    if forest.task is Task.REGRESSION:
        acc = np.zeros(n)
        cnt = np.zeros(n, dtype=np.int64)
        for t, tree in enumerate(forest.trees):
            oob = forest.oob_masks[t]
            if not oob.any():
                continue
            acc[oob] += tree.apply(xq[oob])
            cnt[oob] += 1
        covered = cnt > 0
        if not covered.any():
            return 0.0
        resid = acc[covered] / cnt[covered] - y[covered]
        mse = float(np.mean(resid**2))
        var = float(np.var(y))
        if var == 0.0:
            return 0.0
        return math.sqrt(mse / var)
    votes = np.zeros((n, forest.n_classes), dtype=np.int64)
    for t, tree in enumerate(forest.trees):
        oob = forest.oob_masks[t]
        if not oob.any():
            continue
        codes = tree.apply(xq[oob]).astype(np.int64)
        votes[np.flatnonzero(oob), codes] += 1
    covered = votes.sum(axis=1) > 0
    if not covered.any():
        return 0.0
    pred = np.argmax(votes[covered], axis=1)
    return float(np.mean(pred != y[covered].astype(np.int64)))


# ---------------------------------------------------------------------------
# Serialization (debugging aid)
# ---------------------------------------------------------------------------

def _schema_fingerprint(schema: tuple[Variable, ...]) -> str:
    doc = [
        (v.name, v.kind.value, list(v.levels) if v.levels else None)
        for v in schema
    ]
    return hashlib.sha256(json.dumps(doc).encode()).hexdigest()[:16]


def _variable_to_doc(v: Variable) -> dict:
    doc = {"name": v.name, "kind": v.kind.value}
    if v.levels is not None:
        doc["levels"] = list(v.levels)
    return doc


def _variable_from_doc(doc: dict) -> Variable:
    levels = tuple(doc["levels"]) if "levels" in doc else None
    return Variable(doc["name"], VariableKind(doc["kind"]), levels)


def forest_to_json(forest: Forest) -> str:
    doc = {
        "version": 1,
        "task": forest.task.value,
        "schema_fingerprint": _schema_fingerprint(forest.predictor_schema),
        "predictor_schema": [_variable_to_doc(v) for v in forest.predictor_schema],
        "response": _variable_to_doc(forest.response),
        "params": {
            "n_tree": forest.params.n_tree,
            "m_try": forest.params.m_try,
            "min_node_regression": forest.params.min_node_regression,
            "min_node_classification": forest.params.min_node_classification,
            "seed": forest.params.seed,
        },
        "oob_masks": [
            [int(i) for i in np.flatnonzero(m)] for m in forest.oob_masks
        ],
        "n_rows": int(forest.oob_masks.shape[1]),
        "trees": [
            {
                "feature": t.feature.tolist(),
                "threshold": t.threshold.tolist(),
                "is_cat_split": t.is_cat_split.tolist(),
                "cat_left": t.cat_left.tolist(),
                "cat_right": t.cat_right.tolist(),
                "left": t.left.tolist(),
                "right": t.right.tolist(),
                "leaf_value": t.leaf_value.tolist(),
                "gain": t.gain.tolist(),
                "n_node": t.n_node.tolist(),
            }
            for t in forest.trees
        ],
    }
    return json.dumps(doc, sort_keys=True)


def forest_from_json(text: str) -> Forest:
    doc = json.loads(text)
    if doc.get("version") != 1:
        raise ValueError("unsupported forest document version")
    trees = tuple(
        Tree(
            np.array(t["feature"], dtype=np.int64),
            np.array(t["threshold"]),
            np.array(t["is_cat_split"], dtype=np.uint8),
            np.array(t["cat_left"], dtype=np.int64),
            np.array(t["cat_right"], dtype=np.int64),
            np.array(t["left"], dtype=np.int64),
            np.array(t["right"], dtype=np.int64),
            np.array(t["leaf_value"]),
            np.array(t["gain"]),
            np.array(t["n_node"], dtype=np.int64),
        )
        for t in doc["trees"]
    )
    n = doc["n_rows"]
    oob_masks = np.zeros((len(trees), n), dtype=bool)
    for i, rows in enumerate(doc["oob_masks"]):
        oob_masks[i, rows] = True
    params = ForestParams(**doc["params"])
    return Forest(
        trees=trees,
        oob_masks=oob_masks,
        task=Task(doc["task"]),
        params=params,
        predictor_schema=tuple(_variable_from_doc(d) for d in doc["predictor_schema"]),
        response=_variable_from_doc(doc["response"]),
    )
