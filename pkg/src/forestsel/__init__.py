"""Automatic variable selection with regression trees and random forests.

Permutation importances from repeated full-data fits give an importance
threshold; a two-level cross-validation tunes the model parameter per fold,
averages importances across folds and keeps the variables above the threshold.
"""

__version__ = "0.1.0"

from .cart import RegressionTree, fit_bootstrap_tree, fit_tree, predict_tree, tree_importance
from .data import Column, Dataset, FoldPlan, ingest_csv, make_folds, write_csv
from .forest import Forest, fit_forest, forest_importance, oob_error, predict_forest
from .pipeline import (
    SelectionReport,
    StrategyConfig,
    prediction_metrics,
    run_lolo_dcv,
    selection_accuracy,
    selection_power,
)
from .simgen import SimSpec, simulate, sweep_variable_counts
from .tuning import compute_vi_min, quadratic_distance, select_m, select_variables, threshold_from_matrix

__all__ = [
    "Column",
    "Dataset",
    "FoldPlan",
    "Forest",
    "RegressionTree",
    "SelectionReport",
    "SimSpec",
    "StrategyConfig",
    "compute_vi_min",
    "fit_bootstrap_tree",
    "fit_forest",
    "fit_tree",
    "forest_importance",
    "ingest_csv",
    "make_folds",
    "oob_error",
    "predict_forest",
    "predict_tree",
    "prediction_metrics",
    "quadratic_distance",
    "run_lolo_dcv",
    "select_m",
    "select_variables",
    "selection_accuracy",
    "selection_power",
    "simulate",
    "sweep_variable_counts",
    "threshold_from_matrix",
    "tree_importance",
    "write_csv",
]
