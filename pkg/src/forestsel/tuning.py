"""Importance threshold and per-fold model parameter choice.

The threshold comes from repeated full-data runs: each run gives a column
of importances, its smallest nonzero entry is that run's sigma, and the
threshold is ``min(sigma) + sd(sigma)`` (sample sd). Negative importances
are kept when taking the minimum.

The model parameter ``m`` (tree: ``min_node_size``; forest: ``ntree``) is
the candidate whose importance vector is closest, in Euclidean distance, to
the mean importance vector over all candidates.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ._parallel import pmap
from ._rng import derive_seed
from .cart import RegressionTree, fit_bootstrap_tree, tree_importance
from .data import Dataset
from .forest import Forest, ImportanceVector, fit_forest, per_tree_importance

logger = logging.getLogger(__name__)

TREE, FOREST = "tree", "forest"
STRATEGIES = (TREE, FOREST)

DEFAULT_NTREE = 500
DEFAULT_MIN_NODE_SIZE = 5
DEFAULT_NTREE_GRID = (10, 25, 50, 100, 250, 500)
SIGNED, POSITIVE = "signed", "positive"
SIGN_CONVENTIONS = {
    SIGNED: "sigma_j = min over nonzero entries of run j, negative entries kept",
    POSITIVE: "sigma_j = min over strictly positive entries of run j",
}


class EmptySelectionWarning(UserWarning):
    pass


@dataclass(frozen=True, eq=False)
class ImportanceMatrix:
    """q x n_r importances: one row per variable, one column per run or candidate."""

    entries: np.ndarray
    variable_names: list[str] = field(default_factory=list)

    def __post_init__(self):
        e = np.asarray(self.entries, dtype=np.float64)
        if e.ndim != 2 or e.shape[0] < 1 or e.shape[1] < 1:
            raise ValueError("importance matrix must be q x n_r with q, n_r >= 1")
        if not np.all(np.isfinite(e)):
            raise ValueError("importance matrix entries must be finite")
        object.__setattr__(self, "entries", e)

    @property
    def q(self) -> int:
        return self.entries.shape[0]

    @property
    def n_r(self) -> int:
        return self.entries.shape[1]

    def row_means(self) -> np.ndarray:
        return self.entries.mean(axis=1)


@dataclass(frozen=True, eq=False)
class Threshold:
    vi_min: float
    sigma: np.ndarray
    n_r: int
    skipped: list[int] = field(default_factory=list)
    matrix: ImportanceMatrix | None = None
    sign_convention: str = SIGNED

    def to_dict(self) -> dict:
        return {
            "vi_min": self.vi_min,
            "sigma": self.sigma.tolist(),
            "n_r": self.n_r,
            "skipped_runs": self.skipped,
            "sign_convention": self.sign_convention,
            "sign_convention_rule": SIGN_CONVENTIONS[self.sign_convention],
        }


@dataclass(frozen=True, eq=False)
class CandidateSweep:
    candidates: list[int]
    distances: np.ndarray
    argmin_set: list[int]
    chosen_min_node_size: int
    chosen_ntree: int
    matrix: ImportanceMatrix
    failed: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "candidates": list(self.candidates),
            "distances": self.distances.tolist(),
            "argmin_set": list(self.argmin_set),
            "chosen_min_node_size": self.chosen_min_node_size,
            "chosen_ntree": self.chosen_ntree,
            "failed": {str(k): v for k, v in self.failed.items()},
        }


def _check_strategy(strategy: str):
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}; expected one of {STRATEGIES}")


# ---------------------------------------------------------------- threshold


def threshold_from_matrix(matrix: ImportanceMatrix | np.ndarray, sign_convention: str = SIGNED) -> Threshold:
    """min(sigma) + sd(sigma), sigma_j the smallest nonzero entry of column j.

    With ``sign_convention="positive"`` only strictly positive entries count.
    Columns with no usable entry are skipped. With a single usable column sd is 0.
    """
    if sign_convention not in SIGN_CONVENTIONS:
        raise ValueError(f"unknown sign convention {sign_convention!r}")
    if not isinstance(matrix, ImportanceMatrix):
        matrix = ImportanceMatrix(matrix)
    sigma, skipped = [], []
    for j in range(matrix.n_r):
        col = matrix.entries[:, j]
        nz = col[col > 0.0] if sign_convention == POSITIVE else col[col != 0.0]
        if nz.size == 0:
            skipped.append(j)
        else:
            sigma.append(nz.min())
    if not sigma:
        raise ValueError("no importance run has a usable entry (constant target?)")
    if skipped:
        logger.warning("threshold: %d all-zero importance runs skipped", len(skipped))
    sigma = np.asarray(sigma)
    # exact 0 for a constant sigma; np.std can leave rounding residue there
    sd = 0.0 if np.all(sigma == sigma[0]) else float(np.std(sigma, ddof=1))
    return Threshold(float(sigma.min()) + sd, sigma, matrix.n_r, skipped, matrix, sign_convention)


def compute_vi_min(
    data: Dataset,
    strategy: str = FOREST,
    n_r: int = 100,
    seed: int = 0,
    ntree: int = DEFAULT_NTREE,
    min_node_size: int = DEFAULT_MIN_NODE_SIZE,
    feature_subset_size: int | None = None,
    threads: int | None = 1,
    sign_convention: str = SIGNED,
) -> Threshold:
    """Run the full model ``n_r`` times on all of ``data`` and derive the threshold."""
    _check_strategy(strategy)
    if data.n < 1:
        raise ValueError("empty dataset")
    if n_r < 1:
        raise ValueError("n_r must be >= 1")

    def run(j):
        fit_seed = derive_seed(seed, "vi_min", j)
        perm_seed = derive_seed(seed, "vi_min_perm", j)
        if strategy == FOREST:
            forest = fit_forest(data, ntree, min_node_size, feature_subset_size, fit_seed)
            return per_tree_importance(forest, data, perm_seed).sum(axis=0) / forest.ntree
        tree = fit_bootstrap_tree(data, min_node_size, None, fit_seed)
        if tree.oob_mask.sum() < 2:
            return np.zeros(data.q)
        return tree_importance(tree, data, perm_seed)

    cols = pmap(run, range(n_r), threads)
    return threshold_from_matrix(ImportanceMatrix(np.column_stack(cols), data.names), sign_convention)


# ---------------------------------------------------------------- model parameter


def quadratic_distance(matrix: ImportanceMatrix | np.ndarray, column: int) -> float:
    """Euclidean distance between one column and the row-mean vector."""
    if not isinstance(matrix, ImportanceMatrix):
        matrix = ImportanceMatrix(matrix)
    if not 0 <= column < matrix.n_r:
        raise IndexError(f"column {column} out of range [0, {matrix.n_r})")
    diff = matrix.row_means() - matrix.entries[:, column]
    return float(np.sqrt(np.sum(diff * diff)))


def argmin_choice(candidates: Sequence[int], distances: np.ndarray) -> tuple[list[int], int, int]:
    """Argmin set H and the (min_node_size, ntree) pair it implies.

    A single minimiser h gives both parameters h; otherwise min(H) and max(H).
    """
    d = np.asarray(distances, dtype=float)
    dmin = d.min()
    hits = [c for c, v in zip(candidates, d) if v <= dmin * (1 + 1e-12)]
    H = sorted(set(hits))
    return H, min(H), max(H)


def default_grid(strategy: str, n_obs: int) -> list[int]:
    _check_strategy(strategy)
    if strategy == FOREST:
        return list(DEFAULT_NTREE_GRID)
    grid, a, b = [1], 1, 2
    while b <= n_obs:
        grid.append(b)
        a, b = b, a + b
    return grid


@dataclass(eq=False)
class SweepModels:
    """Fitted models behind a sweep, reusable for the chosen parameter."""

    strategy: str
    forest: Forest | None = None
    tree_importances: np.ndarray | None = None  # (ntree, q), forest strategy
    trees: dict = field(default_factory=dict)  # candidate -> (tree, importance), tree strategy

    def model_for(self, sweep: CandidateSweep):
        if self.strategy == FOREST:
            m = sweep.chosen_ntree
            return self.forest.head(m), self.tree_importances[:m].sum(axis=0) / m
        return self.trees[sweep.chosen_min_node_size]


def sweep_candidates(
    train: Dataset,
    strategy: str,
    candidates: Sequence[int],
    seed: int = 0,
    min_node_size: int = DEFAULT_MIN_NODE_SIZE,
    feature_subset_size: int | None = None,
    threads: int | None = 1,
) -> tuple[CandidateSweep, SweepModels]:
    """:func:`select_m` that also returns the fitted models.

    Forest candidates share one seed, so every candidate forest is a prefix
    of the largest one; it is grown once.
    """
    _check_strategy(strategy)
    candidates = [int(c) for c in candidates]
    if not candidates:
        raise ValueError("need at least one candidate")
    fit_seed = derive_seed(seed, "fit")
    perm_seed = derive_seed(seed, "perm")
    failed: dict = {}
    models = SweepModels(strategy)
    columns: dict[int, np.ndarray] = {}

    if strategy == FOREST:
        bad = [c for c in candidates if c < 1]
        if bad:
            raise ValueError(f"ntree candidates must be >= 1: {bad}")
        forest = fit_forest(train, max(candidates), min_node_size, feature_subset_size, fit_seed, threads)
        per_tree = per_tree_importance(forest, train, perm_seed, threads)
        models.forest, models.tree_importances = forest, per_tree
        cum = np.cumsum(per_tree, axis=0)
        for c in set(candidates):
            columns[c] = cum[c - 1] / c
    else:
        bad = [c for c in candidates if not 1 <= c <= train.n]
        if bad:
            raise ValueError(f"min_node_size candidates must be in [1, {train.n}]: {bad}")

        def fit_one(c):
            try:
                tree = fit_bootstrap_tree(train, c, None, fit_seed)
                if tree.oob_mask.sum() < 2:
                    raise ValueError("fewer than 2 out-of-bag rows")
                return c, tree, tree_importance(tree, train, perm_seed), None
            except (ValueError, FloatingPointError) as exc:
                return c, None, None, str(exc)

        for c, tree, imp, err in pmap(fit_one, sorted(set(candidates)), threads):
            if err is not None:
                failed[c] = err
            else:
                models.trees[c] = (tree, imp)
                columns[c] = imp

    usable = [c for c in candidates if c in columns]
    if not usable:
        raise RuntimeError(f"model fit failed for every candidate: {failed}")
    matrix = ImportanceMatrix(np.column_stack([columns[c] for c in usable]), train.names)
    distances = np.array([quadratic_distance(matrix, j) for j in range(matrix.n_r)])
    H, lo, hi = argmin_choice(usable, distances)
    sweep = CandidateSweep(usable, distances, H, lo, hi, matrix, failed)
    return sweep, models


def select_m(
    train: Dataset,
    strategy: str,
    candidates: Sequence[int],
    seed: int = 0,
    min_node_size: int = DEFAULT_MIN_NODE_SIZE,
    feature_subset_size: int | None = None,
    threads: int | None = 1,
) -> CandidateSweep:
    """Choose the model parameter by minimum quadratic distance of importances."""
    return sweep_candidates(train, strategy, candidates, seed, min_node_size, feature_subset_size, threads)[0]


# ---------------------------------------------------------------- selection


def select_variables(mean_importance: ImportanceVector, threshold: Threshold | float) -> list[str]:
    """Variables whose importance is strictly above the threshold, in column order."""
    vi_min = threshold.vi_min if isinstance(threshold, Threshold) else float(threshold)
    chosen = [name for name, v in zip(mean_importance.variable_names, mean_importance.values) if v > vi_min]
    if not chosen:
        warnings.warn(f"no variable has importance above {vi_min:g}", EmptySelectionWarning, stacklevel=2)
    return chosen
