"""Conformal node intervals and the terminal-node bias test."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .cart import HyperParams, RegressionTree, fit, grid_search_cv
from .data import AuditDataset, shuffle_rows
from .errors import DomainError, StructuralError

ALPHA_GRID = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0)


def empirical_quantile(values, q: float) -> float:
    """Left-continuous empirical quantile ``inf {x : q <= F(x)}``.

    This is the ``ceil(q * n)``-th smallest value (1-based); ``q = 0``
    gives the minimum. No interpolation.
    """
    v = np.asarray(values, dtype=float).reshape(-1)
    if v.size == 0:
        raise DomainError("quantile of an empty vector")
    if not 0.0 <= q <= 1.0:
        raise DomainError(f"quantile level {q!r} outside [0, 1]")
    # rounding guards products like 0.95 * 20 against representation error
    k = max(1, math.ceil(round(q * v.size, 9)))
    return float(np.partition(v, k - 1)[k - 1])


@dataclass(frozen=True)
class NodeInterval:
    node_id: int
    lower: float
    upper: float
    alpha: float
    prediction: float = float("nan")
    is_leaf: bool = True


def node_interval(scores, prediction: float, alpha: float, node_id: int = 0,
                  is_leaf: bool = True) -> NodeInterval:
    resid = np.asarray(scores, dtype=float) - prediction
    lo = prediction + empirical_quantile(resid, alpha / 2.0)
    hi = prediction + empirical_quantile(resid, 1.0 - alpha / 2.0)
    return NodeInterval(node_id, lo, hi, alpha, prediction, is_leaf)


def node_intervals(tree: RegressionTree, dataset: AuditDataset, alpha: float) -> list[NodeInterval]:
    """Interval for every node (branch and terminal) from its own residuals.

    Residuals are taken against the node's point prediction, over the
    training rows that reached it; ``dataset`` must be the one the tree
    was fitted on.
    """
    if not 0.0 < alpha <= 1.0:
        raise DomainError(f"alpha {alpha!r} outside (0, 1]")
    out = []
    for node in tree.nodes:
        if node.sample_indices is None or len(node.sample_indices) == 0:
            raise StructuralError(f"node {node.id} has no training samples")
        out.append(node_interval(dataset.scores[node.sample_indices], node.prediction,
                                 alpha, node.id, node.is_leaf))
    return out


def detect_bias_at_alpha(intervals: Sequence[NodeInterval], orientation: str = "performance") -> set[int]:
    """Terminal nodes whose interval separates from every other one.

    Under the performance orientation a node is flagged when its upper
    bound is at most the smallest lower bound among the others; under the
    residual orientation when its lower bound is at least the largest upper
    bound among the others. Equality counts as separation.
    """
    if orientation not in ("performance", "residual"):
        raise DomainError(f"unknown orientation {orientation!r}")
    ivs = list(intervals)
    if len(ivs) < 2:
        return set()
    lows = np.array([iv.lower for iv in ivs])
    highs = np.array([iv.upper for iv in ivs])
    flagged = set()
    for i, iv in enumerate(ivs):
        others = np.arange(len(ivs)) != i
        if orientation == "performance":
            if iv.upper <= lows[others].min():
                flagged.add(iv.node_id)
        elif iv.lower >= highs[others].max():
            flagged.add(iv.node_id)
    return flagged


def leaf_intervals(tree: RegressionTree, dataset: AuditDataset, alpha: float) -> list[NodeInterval]:
    return [iv for iv in node_intervals(tree, dataset, alpha) if iv.is_leaf]


def alpha_sweep(tree: RegressionTree, dataset: AuditDataset,
                orientation: str = "performance") -> dict[int, float | None]:
    """Smallest grid alpha at which each terminal node is flagged (else None)."""
    leaves = [node for node in tree.nodes if node.is_leaf]
    best: dict[int, float | None] = {node.id: None for node in leaves}
    if len(leaves) < 2:
        return best
    for node in leaves:
        if node.sample_indices is None:
            raise StructuralError(f"node {node.id} has no training samples")
    for alpha in ALPHA_GRID:
        ivs = [node_interval(dataset.scores[node.sample_indices], node.prediction, alpha, node.id)
               for node in leaves]
        for nid in detect_bias_at_alpha(ivs, orientation):
            if best[nid] is None:
                best[nid] = alpha
        if all(v is not None for v in best.values()):
            break
    return best


@dataclass(frozen=True)
class BiasVerdict:
    node_id: int
    detected: bool
    optimized_alpha: float | None

    @property
    def confidence_level(self) -> float | None:
        if self.optimized_alpha is None:
            return None
        return round(1.0 - self.optimized_alpha, 10)


@dataclass(frozen=True, eq=False)
class BiasReport:
    """Outcome of a detection run.

    ``tree`` and ``data`` are the tree whose leaves the verdicts describe
    and the (shuffled or resampled) dataset it was fitted on.
    """

    verdicts: tuple[BiasVerdict, ...]
    global_detected: bool
    alpha_star: float
    epochs: int
    orientation: str
    bag_size: int = 1
    hyperparams: HyperParams | None = None
    tree: RegressionTree | None = field(default=None, repr=False)
    data: AuditDataset | None = field(default=None, repr=False)
    epoch_votes: tuple[int, ...] = ()

    def flagged(self) -> list[BiasVerdict]:
        return [v for v in self.verdicts if v.detected]


def verdicts_for(tree: RegressionTree, dataset: AuditDataset, alpha_star: float,
                 orientation: str) -> list[BiasVerdict]:
    sweep = alpha_sweep(tree, dataset, orientation)
    return [BiasVerdict(nid, a is not None and a <= alpha_star + 1e-12, a)
            for nid, a in sorted(sweep.items())]


def _seeds(seed: int, count: int) -> list[int]:
    return [int(s.generate_state(1, dtype=np.uint64)[0])
            for s in np.random.SeedSequence(seed).spawn(count)]


def run_bias_detection(dataset: AuditDataset, grid: Iterable[HyperParams], alpha_star: float = 0.2,
                       epochs: int = 1, bag_size: int = 1, seed: int = 0,
                       folds: int = 5) -> BiasReport:
    """Shuffle, tune, fit and test for bias, ``epochs`` times.

    With ``bag_size > 1`` every epoch fits that many trees on bootstrap
    resamples using the epoch's tuned hyperparameters; the epoch detects
    bias when a strict majority of them flag some terminal node at an
    alpha no larger than ``alpha_star``. Without bagging one tree is fitted
    on the shuffled data. The per-node table comes from the first tree of
    the final epoch.
    """
    if epochs < 1:
        raise DomainError("epochs must be >= 1")
    if bag_size < 1:
        raise DomainError("bag_size must be >= 1")
    if not 0.0 < alpha_star < 1.0:
        raise DomainError("alpha_star must lie in (0, 1)")
    grid = list(grid)
    orientation = dataset.orientation
    detected = False
    votes = []
    table = None
    for epoch_seed in _seeds(seed, epochs):
        shuffle_seed, cv_seed, bag_seed = _seeds(epoch_seed, 3)
        data = shuffle_rows(dataset, shuffle_seed)
        params = grid[0] if len(grid) == 1 else grid_search_cv(data, grid, folds, cv_seed)
        members = []
        if bag_size == 1:
            members.append((data, fit(data, params, cv_seed)))
        else:
            for member_seed in _seeds(bag_seed, bag_size):
                rng = np.random.default_rng(member_seed)
                boot = data.take(rng.integers(0, data.n, size=data.n))
                members.append((boot, fit(boot, params, member_seed)))
        count = 0
        epoch_table = None
        for boot, tree in members:
            v = verdicts_for(tree, boot, alpha_star, orientation)
            if epoch_table is None:
                epoch_table = (v, tree, boot, params)
            count += any(x.detected for x in v)
        votes.append(count)
        if count * 2 > len(members):
            detected = True
        table = epoch_table
    verdicts, tree, data, params = table
    return BiasReport(tuple(verdicts), detected, alpha_star, epochs, orientation, bag_size,
                      params, tree, data, tuple(votes))
