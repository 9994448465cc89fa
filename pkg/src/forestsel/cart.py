"""Binary regression trees grown by greedy SSE reduction.

``min_node_size`` is the smallest node on which a split is attempted: a
node with fewer observations, a constant target, or no split with strictly
positive SSE reduction becomes a leaf. There is no pruning.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from ._rng import derive_seed, rng_for
from .data import Dataset

_ARRAYS = ("feature", "threshold", "left_mask", "right_mask", "left", "right", "value", "count", "gain")


class SchemaError(ValueError):
    """Prediction rows do not match the schema a model was trained on."""


@dataclass(frozen=True)
class SplitRule:
    variable: int
    kind: str  # "numeric-threshold" or "category-subset"
    threshold: float = 0.0
    left_levels: frozenset[int] = frozenset()
    right_levels: frozenset[int] = frozenset()


@dataclass(eq=False)
class RegressionTree:
    feature: np.ndarray
    threshold: np.ndarray
    left_mask: np.ndarray
    right_mask: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    count: np.ndarray
    gain: np.ndarray
    min_node_size: int
    schema: list[dict]
    feature_subset_size: int | None = None
    seed: int | None = None
    sample: np.ndarray | None = None
    oob_mask: np.ndarray | None = None
    train_row_ids: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self._is_cat = np.array([c["kind"] == "categorical" for c in self.schema], dtype=np.bool_)

    @property
    def feature_count(self) -> int:
        return len(self.schema)

    @property
    def n_nodes(self) -> int:
        return int(self.feature.size)

    @property
    def n_leaves(self) -> int:
        return int(np.sum(self.feature < 0))

    @property
    def is_categorical(self) -> np.ndarray:
        return self._is_cat

    def used_variables(self) -> np.ndarray:
        return np.unique(self.feature[self.feature >= 0])

    def rule(self, node: int) -> SplitRule | None:
        f = int(self.feature[node])
        if f < 0:
            return None
        if self.schema[f]["kind"] == "categorical":
            return SplitRule(
                f,
                "category-subset",
                left_levels=_mask_levels(self.left_mask[node]),
                right_levels=_mask_levels(self.right_mask[node]),
            )
        return SplitRule(f, "numeric-threshold", threshold=float(self.threshold[node]))

    def depth(self) -> int:
        def walk(node):
            if self.feature[node] < 0:
                return 0
            return 1 + max(walk(self.left[node]), walk(self.right[node]))

        return walk(0)

    def _arrays(self):
        return (
            self.feature,
            self.threshold,
            self.left_mask,
            self.right_mask,
            self.left,
            self.right,
            self.value,
            self.count,
        )

    def apply(self, rows) -> np.ndarray:
        """Leaf id reached by each row."""
        X = design_matrix(rows, self.schema)
        is_cat = self.is_categorical
        f, t, lm, rm, l, r, _, c = self._arrays()
        return np.array(
            [_kernels._route(X, i, -1, 0.0, is_cat, f, t, lm, rm, l, r, c) for i in range(X.shape[0])],
            dtype=np.int64,
        )

    # -- serialization

    def to_dict(self, include_sample: bool = True) -> dict:
        nodes = []
        for i in range(self.n_nodes):
            node = {"id": i, "count": int(self.count[i]), "value": float(self.value[i])}
            rule = self.rule(i)
            if rule is not None:
                node["variable"] = self.schema[rule.variable]["name"]
                node["variable_index"] = rule.variable
                node["left"] = int(self.left[i])
                node["right"] = int(self.right[i])
                node["gain"] = float(self.gain[i])
                if rule.kind == "numeric-threshold":
                    node["threshold"] = rule.threshold
                else:
                    node["left_levels"] = sorted(rule.left_levels)
                    node["right_levels"] = sorted(rule.right_levels)
            nodes.append(node)
        out = {
            "format": "forestsel-tree/1",
            "min_node_size": self.min_node_size,
            "feature_subset_size": self.feature_subset_size,
            "seed": self.seed,
            "schema": self.schema,
            "nodes": nodes,
        }
        if include_sample and self.sample is not None:
            out["sample"] = self.sample.tolist()
            if self.oob_mask is not None:
                out["n_train"] = int(self.oob_mask.size)
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "RegressionTree":
        nodes = d["nodes"]
        k = len(nodes)
        arr = {
            "feature": np.full(k, -1, np.int64),
            "threshold": np.zeros(k),
            "left_mask": np.zeros(k, np.uint64),
            "right_mask": np.zeros(k, np.uint64),
            "left": np.full(k, -1, np.int64),
            "right": np.full(k, -1, np.int64),
            "value": np.zeros(k),
            "count": np.zeros(k, np.int64),
            "gain": np.zeros(k),
        }
        for node in nodes:
            i = node["id"]
            arr["value"][i] = node["value"]
            arr["count"][i] = node["count"]
            if "variable_index" in node:
                arr["feature"][i] = node["variable_index"]
                arr["left"][i] = node["left"]
                arr["right"][i] = node["right"]
                arr["gain"][i] = node.get("gain", 0.0)
                if "threshold" in node:
                    arr["threshold"][i] = node["threshold"]
                else:
                    arr["left_mask"][i] = _levels_mask(node["left_levels"])
                    arr["right_mask"][i] = _levels_mask(node["right_levels"])
        sample = d.get("sample")
        oob = None
        if sample is not None and "n_train" in d:
            oob = np.bincount(np.asarray(sample, dtype=np.int64), minlength=d["n_train"]) == 0
        return cls(
            **arr,
            min_node_size=d["min_node_size"],
            schema=d["schema"],
            feature_subset_size=d.get("feature_subset_size"),
            seed=d.get("seed"),
            sample=None if sample is None else np.asarray(sample, dtype=np.int64),
            oob_mask=oob,
        )

    @classmethod
    def from_json(cls, text: str) -> "RegressionTree":
        return cls.from_dict(json.loads(text))


def _mask_levels(mask) -> frozenset[int]:
    m = int(mask)
    return frozenset(i for i in range(_kernels.MAX_MASK_LEVELS) if m >> i & 1)


def _levels_mask(levels) -> np.uint64:
    m = 0
    for lv in levels:
        m |= 1 << int(lv)
    return np.uint64(m)


def design_matrix(rows, schema: list[dict]) -> np.ndarray:
    """Rows as a float matrix laid out like ``schema``.

    A Dataset is checked column by column; categorical levels are matched
    by name, and levels the model never saw are coded -1. A bare array is
    taken as already encoded.
    """
    if isinstance(rows, np.ndarray):
        X = np.asarray(rows, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != len(schema):
            raise SchemaError(f"expected {len(schema)} columns, got array of shape {X.shape}")
        return X
    if not isinstance(rows, Dataset):
        raise TypeError(f"cannot predict on {type(rows).__name__}")
    if rows.q != len(schema):
        raise SchemaError(f"expected {len(schema)} columns, got {rows.q}")
    X = np.empty((rows.n, rows.q))
    for j, (col, spec) in enumerate(zip(rows.columns, schema)):
        if col.name != spec["name"] or col.kind != spec["kind"]:
            raise SchemaError(
                f"column {j}: expected {spec['name']!r} ({spec['kind']}), got {col.name!r} ({col.kind})"
            )
        if col.is_categorical and tuple(col.levels) != tuple(spec["levels"]):
            lookup = {name: i for i, name in enumerate(spec["levels"])}
            remap = np.array([lookup.get(name, -1) for name in col.levels], dtype=np.float64)
            X[:, j] = remap[col.values]
        else:
            X[:, j] = col.values
    return X


def grow_tree(
    train: Dataset,
    sample: np.ndarray,
    min_node_size: int,
    feature_subset_size: int | None,
    seed: int,
) -> RegressionTree:
    """Grow one tree on ``train`` rows listed in ``sample`` (repeats allowed)."""
    q = train.q
    mtry = q if feature_subset_size is None else int(feature_subset_size)
    sample = np.ascontiguousarray(sample, dtype=np.int64)
    if mtry < q:
        unif = rng_for(seed).random(sample.size * mtry)
    else:
        unif = np.empty(0)
    y = train.target.astype(np.float64)
    parts = _kernels.grow(
        train.column_major, train.column_order, train.categorical_mask, y, sample, int(min_node_size), mtry, unif
    )
    return RegressionTree(
        *parts,
        min_node_size=int(min_node_size),
        schema=train.schema_signature(),
        feature_subset_size=feature_subset_size,
        seed=seed,
        train_row_ids=train.row_ids,
    )


def _check_fit_args(train: Dataset, min_node_size: int, feature_subset_size: int | None):
    if train.n < 1:
        raise ValueError("cannot fit a tree on an empty training set")
    if min_node_size < 1:
        raise ValueError("min_node_size must be >= 1")
    if feature_subset_size is not None and not 1 <= feature_subset_size <= max(train.q, 1):
        raise ValueError(f"feature_subset_size must be in [1, {train.q}]")


def fit_tree(
    train: Dataset,
    min_node_size: int,
    feature_subset_size: int | None = None,
    seed: int = 0,
    sample: np.ndarray | None = None,
) -> RegressionTree:
    """Fit a regression tree.

    Parameters
    ----------
    train : Dataset
    min_node_size : int
        Nodes with fewer observations are not split.
    feature_subset_size : int, optional
        Number of variables drawn uniformly at each node. All variables
        when None.
    seed : int
        Drives the per-node variable draws only.
    sample : array of int, optional
        Row indices to grow on (a bootstrap sample, say). When given, rows
        absent from it form the tree's out-of-bag set.
    """
    _check_fit_args(train, min_node_size, feature_subset_size)
    if sample is None:
        return grow_tree(train, np.arange(train.n), min_node_size, feature_subset_size, seed)
    sample = np.asarray(sample, dtype=np.int64)
    if sample.size == 0:
        raise ValueError("cannot fit a tree on an empty sample")
    tree = grow_tree(train, sample, min_node_size, feature_subset_size, seed)
    tree.sample = sample
    tree.oob_mask = np.bincount(sample, minlength=train.n) == 0
    return tree


def bootstrap_sample(n: int, seed: int) -> np.ndarray:
    return rng_for(seed, "bootstrap").integers(0, n, size=n)


def fit_bootstrap_tree(
    train: Dataset,
    min_node_size: int,
    feature_subset_size: int | None = None,
    seed: int = 0,
) -> RegressionTree:
    """Tree grown on a size-n bootstrap of ``train``; carries its OOB mask."""
    _check_fit_args(train, min_node_size, feature_subset_size)
    sample = bootstrap_sample(train.n, seed)
    return fit_tree(train, min_node_size, feature_subset_size, derive_seed(seed, "grow"), sample)


def predict_tree(tree: RegressionTree, rows) -> np.ndarray:
    X = design_matrix(rows, tree.schema)
    return _kernels.predict(X, tree.is_categorical, *tree._arrays())


def permutation_scores(
    tree: RegressionTree, X: np.ndarray, y: np.ndarray, rng: np.random.Generator
) -> np.ndarray:
    """Per-variable OOB error increase after permuting that variable.

    One row of uniforms per variable is drawn from ``rng`` in variable
    order, so the shuffle for a variable does not depend on which variables
    the tree happens to use. Unused variables cannot change any routing and
    score exactly 0.
    """
    q = tree.feature_count
    rows = np.flatnonzero(tree.oob_mask)
    unif = rng.random((q, rows.size))
    used = tree.used_variables()
    out = np.zeros(q)
    if used.size == 0:
        return out
    base, errs = _kernels.permutation_errors(X, y, rows, unif, used, tree.is_categorical, *tree._arrays())
    out[used] = errs - base
    return out


def tree_importance(tree: RegressionTree, train: Dataset, seed: int = 0) -> np.ndarray:
    """Permutation importance of each variable over the tree's OOB rows."""
    if tree.oob_mask is None:
        raise ValueError("tree has no out-of-bag mask; grow it on a bootstrap sample")
    if tree.oob_mask.size != train.n:
        raise ValueError("OOB mask does not match the training set")
    if tree.oob_mask.sum() < 2:
        raise ValueError("need at least 2 out-of-bag rows for importance")
    X = design_matrix(train, tree.schema)
    return permutation_scores(tree, X, train.target.astype(np.float64), rng_for(seed, "perm"))
