"""Random forest regression with out-of-bag error and permutation importance.

Public parameter names and what they control:

* ``ntree`` - number of bootstrap trees;
* ``min_node_size`` - per-tree split-attempt size (see :mod:`forestsel.cart`);
* ``feature_subset_size`` - variables drawn at each node, default ``max(1, q // 3)``.

Tree ``t`` depends only on ``(seed, t)``, so the first ``m`` trees of a
forest are exactly the forest grown with ``ntree=m`` and the same seed.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._parallel import pmap
from ._rng import derive_seed, rng_for
from .cart import RegressionTree, design_matrix, fit_bootstrap_tree, permutation_scores, predict_tree
from .data import Dataset

logger = logging.getLogger(__name__)

BUNDLE_FORMAT = "forestsel-forest/1"


@dataclass(eq=False)
class Forest:
    trees: list[RegressionTree]
    min_node_size: int
    feature_subset_size: int | None
    seed: int
    schema: list[dict]
    train_row_ids: np.ndarray | None = None

    @property
    def ntree(self) -> int:
        return len(self.trees)

    @property
    def variable_names(self) -> list[str]:
        return [c["name"] for c in self.schema]

    def head(self, m: int) -> "Forest":
        """The forest made of the first ``m`` trees (same as refitting with ``ntree=m``)."""
        if not 1 <= m <= self.ntree:
            raise ValueError(f"m must be in [1, {self.ntree}]")
        return Forest(
            self.trees[:m], self.min_node_size, self.feature_subset_size, self.seed, self.schema, self.train_row_ids
        )


@dataclass(frozen=True, eq=False)
class ImportanceVector:
    values: np.ndarray
    variable_names: list[str]

    def __post_init__(self):
        if len(self.values) != len(self.variable_names):
            raise ValueError("one importance value per variable required")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("importance values must be finite")

    def as_dict(self) -> dict[str, float]:
        return {k: float(v) for k, v in zip(self.variable_names, self.values)}


@dataclass(frozen=True)
class OOBError:
    value: float
    rows_used: int
    rows_skipped: int

    def __float__(self):
        return self.value


def default_subset_size(q: int) -> int | None:
    return max(1, q // 3) if q > 0 else None


def fit_forest(
    train: Dataset,
    ntree: int = 500,
    min_node_size: int = 5,
    feature_subset_size: int | None = None,
    seed: int = 0,
    threads: int | None = 1,
) -> Forest:
    """Grow ``ntree`` trees, each on its own size-n bootstrap of ``train``."""
    if train.n < 1:
        raise ValueError("cannot fit a forest on an empty training set")
    if ntree < 1:
        raise ValueError("ntree must be >= 1")
    if feature_subset_size is None:
        feature_subset_size = default_subset_size(train.q)
    # warm the shared caches before any worker touches them
    train.column_major, train.column_order, train.categorical_mask

    def grow(t):
        return fit_bootstrap_tree(train, min_node_size, feature_subset_size, tree_seed(seed, t))

    trees = pmap(grow, range(ntree), threads)
    return Forest(trees, int(min_node_size), feature_subset_size, int(seed), train.schema_signature(), train.row_ids)


def tree_seed(seed: int, t: int) -> int:
    return derive_seed(seed, "tree", t)


def predict_forest(forest: Forest, rows) -> np.ndarray:
    """Row-wise mean of the trees' predictions."""
    X = design_matrix(rows, forest.schema)
    acc = np.zeros(X.shape[0])
    for tree in forest.trees:
        acc += predict_tree(tree, X)
    return acc / forest.ntree


def oob_predictions(forest: Forest, train: Dataset) -> tuple[np.ndarray, np.ndarray]:
    """Per-row mean over the trees for which the row is out of bag, and that tree count."""
    X = design_matrix(train, forest.schema)
    total = np.zeros(train.n)
    hits = np.zeros(train.n, dtype=np.int64)
    for tree in forest.trees:
        _check_oob(tree, train)
        rows = np.flatnonzero(tree.oob_mask)
        if rows.size:
            total[rows] += predict_tree(tree, X[rows])
            hits[rows] += 1
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(hits > 0, total / np.maximum(hits, 1), np.nan), hits


def oob_error(forest: Forest, train: Dataset) -> OOBError:
    """Mean squared OOB error over rows that are out of bag for at least one tree."""
    pred, hits = oob_predictions(forest, train)
    used = hits > 0
    if not used.any():
        raise ValueError("no row is out of bag for any tree")
    skipped = int((~used).sum())
    if skipped:
        logger.info("OOB error: %d rows never out of bag, skipped", skipped)
    resid = train.target[used] - pred[used]
    return OOBError(float(np.mean(resid**2)), int(used.sum()), skipped)


def _check_oob(tree: RegressionTree, train: Dataset):
    if tree.oob_mask is None or tree.oob_mask.size != train.n:
        raise ValueError("forest was not grown on this training set")


def per_tree_importance(forest: Forest, train: Dataset, seed: int = 0, threads: int | None = 1) -> np.ndarray:
    """(ntree, q) matrix of single-tree permutation importances.

    Permutations for tree ``t`` come from ``(seed, t)``. Trees with fewer
    than 2 OOB rows get a zero row.
    """
    X = design_matrix(train, forest.schema)
    y = train.target.astype(np.float64)
    q = len(forest.schema)

    def score(t):
        tree = forest.trees[t]
        _check_oob(tree, train)
        if tree.oob_mask.sum() < 2:
            return np.zeros(q)
        return permutation_scores(tree, X, y, rng_for(seed, "perm", t))

    rows = pmap(score, range(forest.ntree), threads)
    return np.vstack(rows) if rows else np.zeros((0, q))


def forest_importance(forest: Forest, train: Dataset, seed: int = 0, threads: int | None = 1) -> ImportanceVector:
    """Mean over trees of the OOB error increase after permuting each variable."""
    if not any(t.oob_mask is not None and t.oob_mask.any() for t in forest.trees):
        raise ValueError("no row is out of bag for any tree")
    mat = per_tree_importance(forest, train, seed, threads)
    return ImportanceVector(mat.sum(axis=0) / forest.ntree, forest.variable_names)


# ---------------------------------------------------------------- bundles


def schema_hash(schema: list[dict]) -> str:
    return hashlib.sha256(json.dumps(schema, sort_keys=True).encode("utf-8")).hexdigest()


def save_forest(forest: Forest, directory, extra: dict | None = None) -> Path:
    """Write ``manifest.json`` plus one JSON file per tree under ``trees/``."""
    directory = Path(directory)
    (directory / "trees").mkdir(parents=True, exist_ok=True)
    files = []
    for t, tree in enumerate(forest.trees):
        name = f"trees/tree_{t:05d}.json"
        (directory / name).write_text(json.dumps(tree.to_dict(include_sample=False), sort_keys=True), encoding="utf-8")
        files.append(name)
    manifest = {
        "format": BUNDLE_FORMAT,
        "ntree": forest.ntree,
        "min_node_size": forest.min_node_size,
        "feature_subset_size": forest.feature_subset_size,
        "seed": forest.seed,
        "schema": forest.schema,
        "schema_hash": schema_hash(forest.schema),
        "trees": files,
    }
    if extra:
        manifest.update(extra)
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True), encoding="utf-8")
    return directory


def load_forest(directory) -> tuple[Forest, dict]:
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text(encoding="utf-8"))
    if manifest.get("format") != BUNDLE_FORMAT:
        raise ValueError(f"{directory}: not a forest bundle")
    if schema_hash(manifest["schema"]) != manifest["schema_hash"]:
        raise ValueError(f"{directory}: schema hash mismatch")
    trees = [
        RegressionTree.from_json((directory / name).read_text(encoding="utf-8")) for name in manifest["trees"]
    ]
    forest = Forest(
        trees, manifest["min_node_size"], manifest["feature_subset_size"], manifest["seed"], manifest["schema"]
    )
    return forest, manifest
