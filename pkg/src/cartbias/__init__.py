"""Conformal regression trees for auditing where a model underperforms."""

__version__ = "0.1.0"

from .cart import HyperParams, RegressionTree, best_split, fit, grid_search_cv, predict, prune
from .conformal import (BiasReport, BiasVerdict, NodeInterval, alpha_sweep, detect_bias_at_alpha,
                        empirical_quantile, node_intervals, run_bias_detection)
from .data import AuditDataset, FeatureSchema, load_csv, one_hot_encode, shuffle_rows
from .regions import Region, coverage_ratio, hypervolume, intersect, region_from_path

__all__ = [
    "AuditDataset", "BiasReport", "BiasVerdict", "FeatureSchema", "HyperParams", "NodeInterval",
    "Region", "RegressionTree", "alpha_sweep", "best_split", "coverage_ratio",
    "detect_bias_at_alpha", "empirical_quantile", "fit", "grid_search_cv", "hypervolume",
    "intersect", "load_csv", "node_intervals", "one_hot_encode", "predict", "prune",
    "region_from_path", "run_bias_detection", "shuffle_rows",
]
