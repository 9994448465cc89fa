"""Two-level cross-validated variable selection and prediction.

Outer level: N folds; each fold is held out once and predicted by a model
fitted on the others. Inner level: on the training part, the model
parameter is chosen by :func:`forestsel.tuning.select_m`. The per-fold
importance vectors are averaged and compared with the threshold computed
on the full data to select variables.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import time
import warnings
from dataclasses import asdict, dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from ._rng import derive_seed
from .cart import RegressionTree, fit_tree, predict_tree
from .data import Dataset, FoldPlan, make_folds, split_by_fold
from .forest import Forest, ImportanceVector, predict_forest
from .tuning import (
    DEFAULT_MIN_NODE_SIZE,
    DEFAULT_NTREE,
    FOREST,
    TREE,
    EmptySelectionWarning,
    SIGN_CONVENTIONS,
    SIGNED,
    Threshold,
    compute_vi_min,
    default_grid,
    select_variables,
    sweep_candidates,
)

logger = logging.getLogger(__name__)

REPORT_SCHEMA_VERSION = "1.0"
STRATEGY_MODELS = {"LDRT": TREE, "LDRF": FOREST}
OUT_OF_SCOPE = {"LDCT", "LDCF"}


class PipelineError(RuntimeError):
    pass


@dataclass
class StrategyConfig:
    strategy: str = "LDRF"
    outer_folds: int = 10
    grouped: bool = False
    n_r: int = 100
    candidate_grid: list[int] | None = None
    seed: int = 0
    refit_and_select: bool = True
    vi_min_ntree: int = DEFAULT_NTREE
    min_node_size: int = DEFAULT_MIN_NODE_SIZE
    feature_subset_size: int | None = None
    strict_vi_min: bool = False
    sign_convention: str = SIGNED

    def __post_init__(self):
        self.strategy = self.strategy.upper()
        if self.strategy in OUT_OF_SCOPE:
            raise NotImplementedError(f"strategy {self.strategy} not implemented (out of scope)")
        if self.strategy not in STRATEGY_MODELS:
            raise ValueError(f"unknown strategy {self.strategy!r}; expected LDRT or LDRF")
        if self.outer_folds < 2:
            raise ValueError("outer_folds must be >= 2")
        if self.n_r < 2:
            raise ValueError("n_r must be >= 2")
        if self.sign_convention not in SIGN_CONVENTIONS:
            raise ValueError(f"sign_convention must be one of {sorted(SIGN_CONVENTIONS)}")
        if self.candidate_grid is not None:
            self.candidate_grid = [int(c) for c in self.candidate_grid]
            if not self.candidate_grid:
                raise ValueError("candidate_grid must not be empty")

    @property
    def model(self) -> str:
        return STRATEGY_MODELS[self.strategy]

    def grid_for(self, n_obs: int) -> list[int]:
        if self.candidate_grid is None:
            return default_grid(self.model, n_obs)
        if self.model == TREE:
            grid = [c for c in self.candidate_grid if c <= n_obs]
            return grid or [min(self.candidate_grid[0], n_obs)]
        return list(self.candidate_grid)


@dataclass
class FoldResult:
    fold: int
    test_rows: list[int]
    predictions: list[float]
    importance: list[float] | None = None
    sweep: dict | None = None
    min_node_size: int | None = None
    ntree: int | None = None
    vi_min: float | None = None
    error: str | None = None


@dataclass(eq=False)
class SelectionReport:
    config: StrategyConfig
    variable_names: list[str]
    vi_min: Threshold
    per_fold: list[FoldResult]
    importance_matrix: np.ndarray
    mean_importance: ImportanceVector
    selected: list[str]
    predictions: np.ndarray
    observed: np.ndarray
    metrics: dict
    sp_sa: dict | None = None
    refit: dict | None = None
    warnings: list[str] = field(default_factory=list)
    provenance: dict = field(default_factory=dict)
    cpu_seconds: float = 0.0
    final_model: Forest | RegressionTree | None = field(default=None, repr=False)

    def to_dict(self, include_timing: bool = True) -> dict:
        out = {
            "schema_version": REPORT_SCHEMA_VERSION,
            "config": asdict(self.config),
            "provenance": self.provenance,
            "variables": self.variable_names,
            "vi_min": self.vi_min.to_dict(),
            "folds": [asdict(f) for f in self.per_fold],
            "mean_importance": self.mean_importance.as_dict(),
            "selected": self.selected,
            "metrics": dict(self.metrics),
            "selection_scores": self.sp_sa,
            "refit": self.refit,
            "warnings": self.warnings,
        }
        if include_timing:
            out["metrics"]["cpu_seconds"] = self.cpu_seconds
        else:
            out["metrics"].pop("cpu_seconds", None)
        return out

    def to_json(self, include_timing: bool = True) -> str:
        return json.dumps(self.to_dict(include_timing), indent=2, sort_keys=True, allow_nan=True) + "\n"

    def importance_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        folds = [f.fold for f in self.per_fold if f.importance is not None]
        w.writerow(["variable"] + [f"fold_{k}" for k in folds] + ["mean", "selected"])
        chosen = set(self.selected)
        for i, name in enumerate(self.variable_names):
            w.writerow(
                [name]
                + [repr(float(v)) for v in self.importance_matrix[i]]
                + [repr(float(self.mean_importance.values[i])), int(name in chosen)]
            )
        return buf.getvalue()

    def summary(self) -> str:
        m = self.metrics
        rows = [
            ("strategy", self.config.strategy),
            ("observations", str(self.observed.size)),
            ("candidate variables", str(len(self.variable_names))),
            ("VI_min", f"{self.vi_min.vi_min:.6g}"),
            ("selected (|S|)", str(m["remaining"])),
            ("selected variables", ", ".join(self.selected) or "(none)"),
            ("mean observed", f"{m['mean_obs']:.6g}"),
            ("mean prediction", f"{m['mean_pred']:.6g}"),
            ("quadratic risk", f"{m['quadratic_risk']:.6g}"),
            ("absolute risk", f"{m['absolute_risk']:.6g}"),
            ("cpu seconds", f"{self.cpu_seconds:.2f}"),
        ]
        if self.sp_sa is not None:
            rows.insert(5, ("selection power", f"{self.sp_sa['SP']:.4f}"))
            rows.insert(6, ("selection accuracy", f"{self.sp_sa['SA']:.4f}"))
        if self.refit is not None and self.refit.get("metrics"):
            rm = self.refit["metrics"]
            rows.append(("refit quadratic risk", f"{rm['quadratic_risk']:.6g}"))
            rows.append(("refit absolute risk", f"{rm['absolute_risk']:.6g}"))
        for w in self.warnings:
            rows.append(("warning", w))
        width = max(len(k) for k, _ in rows)
        return "".join(f"{k.ljust(width)}  {v}\n" for k, v in rows)


# ---------------------------------------------------------------- metrics


def selection_power(selected: Iterable[str], all_vars: Iterable[str]) -> float:
    """|S| / |V|."""
    S, V = set(selected), set(all_vars)
    if not V:
        raise ValueError("variable set is empty")
    if not S <= V:
        raise ValueError(f"selected variables not in the candidate set: {sorted(S - V)}")
    return len(S) / len(V)


def selection_accuracy(selected: Iterable[str], true_vars: Iterable[str]) -> float:
    """|S intersect V_R| / |S|; 0 for an empty selection."""
    S = set(selected)
    if not S:
        return 0.0
    return len(S & set(true_vars)) / len(S)


def prediction_metrics(predictions: Sequence[float], observed: Sequence[float], elapsed: float = 0.0) -> dict:
    pred = np.asarray(predictions, dtype=float)
    obs = np.asarray(observed, dtype=float)
    if pred.shape != obs.shape:
        raise ValueError(f"length mismatch: {pred.size} predictions, {obs.size} observations")
    if pred.size < 1:
        raise ValueError("need at least one prediction")
    resid = obs - pred
    return {
        "mean_pred": float(pred.mean()),
        "mean_obs": float(obs.mean()),
        "quadratic_risk": float(np.mean(resid**2)),
        "absolute_risk": float(np.mean(np.abs(resid))),
        "cpu_seconds": float(elapsed),
    }


# ---------------------------------------------------------------- algorithm


def _predict(model, rows) -> np.ndarray:
    if isinstance(model, Forest):
        return predict_forest(model, rows)
    return predict_tree(model, rows)


def _model_rows(model) -> np.ndarray:
    """Original row ids of every observation any tree of ``model`` was grown on."""
    trees = model.trees if isinstance(model, Forest) else [model]
    used = [t.train_row_ids[np.unique(t.sample)] if t.sample is not None else t.train_row_ids for t in trees]
    return np.unique(np.concatenate(used)) if used else np.empty(0, np.int64)


def _fit_fold(train: Dataset, config: StrategyConfig, seed: int, threads):
    grid = config.grid_for(train.n)
    sweep, models = sweep_candidates(
        train, config.model, grid, seed, config.min_node_size, config.feature_subset_size, threads
    )
    model, importance = models.model_for(sweep)
    return sweep, model, importance


def _constant_model(train: Dataset) -> RegressionTree:
    return fit_tree(train.select([]), min_node_size=train.n + 1)


def _outer_loop(data: Dataset, plan: FoldPlan, config: StrategyConfig, tag: str, threads, audit, vi_min_fn=None):
    predictions = np.full(data.n, np.nan)
    folds: list[FoldResult] = []
    for k in range(plan.n_folds):
        train, test = split_by_fold(data, plan, k)
        seed = derive_seed(config.seed, tag, k)
        try:
            if data.q == 0:
                model = _constant_model(train)
                sweep, importance = None, np.zeros(0)
            else:
                sweep, model, importance = _fit_fold(train, config, seed, threads)
            preds = _predict(model, test)
            fold_vi = vi_min_fn(train, k) if vi_min_fn is not None else None
        except Exception as exc:  # one bad fold must not abort the run
            logger.warning("%s fold %d failed: %s", tag, k, exc)
            folds.append(FoldResult(k, test.row_ids.tolist(), [], error=f"fold {k}: {exc}"))
            continue
        predictions[plan.test_indices(k)] = preds
        folds.append(
            FoldResult(
                fold=k,
                test_rows=test.row_ids.tolist(),
                predictions=preds.tolist(),
                importance=importance.tolist(),
                sweep=None if sweep is None else sweep.to_dict(),
                min_node_size=None if sweep is None else sweep.chosen_min_node_size,
                ntree=None if sweep is None else sweep.chosen_ntree,
                vi_min=None if fold_vi is None else fold_vi.vi_min,
            )
        )
        if audit is not None:
            audit.append(
                {
                    "phase": tag,
                    "fold": k,
                    "test_rows": test.row_ids.copy(),
                    "train_rows": train.row_ids.copy(),
                    "model_rows": _model_rows(model),
                    "test_groups": None if test.group is None else set(test.group),
                    "model_groups": None if data.group is None else set(data.group[np.isin(data.row_ids, _model_rows(model))]),
                }
            )
    return predictions, folds


def _vi_min(data: Dataset, config: StrategyConfig, seed: int, threads) -> Threshold:
    return compute_vi_min(
        data,
        config.model,
        n_r=config.n_r,
        seed=seed,
        ntree=config.vi_min_ntree,
        min_node_size=config.min_node_size,
        feature_subset_size=config.feature_subset_size,
        threads=threads,
        sign_convention=config.sign_convention,
    )


def run_lolo_dcv(
    data: Dataset,
    config: StrategyConfig,
    threads: int | None = 1,
    audit: list | None = None,
    provenance: dict | None = None,
) -> SelectionReport:
    """Threshold on full data, outer folds with inner tuning, averaged importance, selection."""
    start = time.perf_counter()
    if config.grouped and data.group is None:
        raise PipelineError("grouped folds requested but the dataset has no group labels")
    if data.q < 1:
        raise PipelineError("dataset has no candidate variables")
    notes: list[str] = []

    # VI_min on full data, before the outer loop
    threshold = _vi_min(data, config, derive_seed(config.seed, "vi_min"), threads)
    plan = make_folds(data, config.outer_folds, config.grouped, config.seed)

    vi_min_fn = None
    if config.strict_vi_min:
        vi_min_fn = lambda train, k: _vi_min(train, config, derive_seed(config.seed, "vi_min_fold", k), threads)
    predictions, folds = _outer_loop(data, plan, config, "outer", threads, audit, vi_min_fn)
    ok = [f for f in folds if f.error is None]
    if not ok:
        raise PipelineError("every outer fold failed: " + "; ".join(f.error for f in folds))
    for f in folds:
        if f.error is not None:
            notes.append(f.error)

    M = np.column_stack([f.importance for f in ok])
    mean_imp = ImportanceVector(M.mean(axis=1), data.names)
    if config.strict_vi_min:
        per_fold = np.array([f.vi_min for f in ok])
        threshold = replace(threshold, vi_min=float(per_fold.mean()))
        notes.append("strict mode: threshold is the mean of per-fold VI_min values")

    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", EmptySelectionWarning)
        selected = select_variables(mean_imp, threshold)
    if not selected:
        notes.extend(str(w.message) for w in caught)

    have = ~np.isnan(predictions)
    metrics = prediction_metrics(predictions[have], data.target[have])
    metrics["remaining"] = len(selected)
    metrics["predicted_rows"] = int(have.sum())

    sp_sa = None
    if data.truth_mask is not None:
        sp_sa = {
            "SP": selection_power(selected, data.names),
            "SA": selection_accuracy(selected, data.true_variables),
        }

    refit, final_model = None, None
    if config.refit_and_select:
        refit, final_model = _refit(data, selected, plan, config, threads, audit)

    report = SelectionReport(
        config=config,
        variable_names=data.names,
        vi_min=threshold,
        per_fold=folds,
        importance_matrix=M,
        mean_importance=mean_imp,
        selected=selected,
        predictions=predictions,
        observed=data.target.astype(float),
        metrics=metrics,
        sp_sa=sp_sa,
        refit=refit,
        warnings=notes,
        provenance=dict(provenance or {}),
        final_model=final_model,
    )
    report.cpu_seconds = time.perf_counter() - start
    report.metrics["cpu_seconds"] = report.cpu_seconds
    return report


def _refit(data: Dataset, selected: list[str], plan: FoldPlan, config: StrategyConfig, threads, audit):
    """Cross-validated predictions and a final model using only the selected variables."""
    restricted = data.select(selected)
    preds, folds = _outer_loop(restricted, plan, config, "refit", threads, audit)
    have = ~np.isnan(preds)
    metrics = prediction_metrics(preds[have], data.target[have]) if have.any() else None
    if metrics is not None:
        metrics.pop("cpu_seconds")
    if restricted.q == 0:
        final, params = _constant_model(restricted), {"kind": "constant"}
    else:
        sweep, final, _ = _fit_fold(restricted, config, derive_seed(config.seed, "final"), threads)
        params = {"kind": config.model, "sweep": sweep.to_dict()}
    refit = {
        "variables": selected,
        "predictions": preds.tolist(),
        "metrics": metrics,
        "failed_folds": [f.fold for f in folds if f.error is not None],
        "final_model": params,
    }
    return refit, final
