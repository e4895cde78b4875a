"""CART regression trees over per-sample performance scores.

Also carries the classification impurity measures (entropy, Gini,
information gain) and a small majority-label classifier built on them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from ._kernels import prefix_abs_dev
from .data import AuditDataset
from .errors import DomainError, ShapeError

CRITERIA = ("squared_error", "absolute_error")
MAX_FEATURES = ("all", "sqrt", "log2")

# relative tolerance under which two split gains count as tied
TIE_RTOL = 1e-12


# ---------------------------------------------------------------------------
# impurity measures

def _check_probs(probs) -> np.ndarray:
    p = np.asarray(probs, dtype=float)
    if p.ndim != 1 or p.size == 0:
        raise DomainError("probabilities must be a non-empty vector")
    if np.any(p < 0.0) or np.any(p > 1.0):
        raise DomainError("probabilities must lie in [0, 1]")
    if abs(p.sum() - 1.0) > 1e-9:
        raise DomainError(f"probabilities sum to {p.sum()!r}, not 1")
    return p


def entropy(class_probs) -> float:
    """Shannon entropy in bits, with 0 log 0 taken as 0."""
    p = _check_probs(class_probs)
    nz = p[p > 0.0]
    return float(-np.sum(nz * np.log2(nz))) + 0.0


def gini(class_probs) -> float:
    """Gini impurity ``sum p_i (1 - p_i)``."""
    p = _check_probs(class_probs)
    return float(np.sum(p * (1.0 - p)))


def information_gain(parent_impurity: float, children: Sequence[tuple[float, float]]) -> float:
    """Parent impurity minus the weighted impurity of the children.

    ``children`` is a list of ``(weight, impurity)`` pairs whose weights
    sum to one.
    """
    weights = [w for w, _ in children]
    if abs(sum(weights) - 1.0) > 1e-9 or any(w < 0 for w in weights):
        raise DomainError("child weights must be non-negative and sum to 1")
    return float(parent_impurity - sum(w * imp for w, imp in children))


def node_variance(scores) -> float:
    """Population variance (divisor n)."""
    y = np.asarray(scores, dtype=float)
    if y.size == 0:
        raise DomainError("variance of an empty node is undefined")
    return float(np.mean((y - y.mean()) ** 2))


def mean_abs_deviation(scores) -> float:
    """Mean absolute deviation around the median."""
    y = np.asarray(scores, dtype=float)
    if y.size == 0:
        raise DomainError("deviation of an empty node is undefined")
    return float(np.mean(np.abs(y - np.median(y))))


def variance_reduction(parent, left, right) -> float:
    """Decrease in variance from splitting ``parent`` into ``left``/``right``.

    Child variances are weighted by their share of the parent's rows.
    """
    parent = np.asarray(parent, dtype=float)
    left = np.asarray(left, dtype=float)
    right = np.asarray(right, dtype=float)
    if left.size == 0 or right.size == 0:
        raise DomainError("both children must be non-empty")
    if left.size + right.size != parent.size or not np.array_equal(
            np.sort(parent), np.sort(np.concatenate([left, right]))):
        raise DomainError("left and right do not partition parent")
    n = parent.size
    return node_variance(parent) - (left.size / n * node_variance(left)
                                    + right.size / n * node_variance(right))


def impurity(scores, criterion: str = "squared_error") -> float:
    if criterion == "squared_error":
        return node_variance(scores)
    if criterion == "absolute_error":
        return mean_abs_deviation(scores)
    raise DomainError(f"unknown criterion {criterion!r}")


# ---------------------------------------------------------------------------
# tree types

@dataclass(frozen=True)
class SplitRule:
    """Rows with ``x[feature_index] <= threshold`` go left."""

    feature_index: int
    threshold: float

    def goes_left(self, x) -> bool:
        return x[self.feature_index] <= self.threshold


@dataclass(frozen=True)
class HyperParams:
    criterion: str = "squared_error"
    max_depth: int = 3
    min_samples_split: int = 2
    min_samples_leaf: int = 1
    ccp_alpha: float = 0.0
    max_features: str = "all"

    def __post_init__(self):
        if self.max_features is None:
            object.__setattr__(self, "max_features", "all")
        if self.criterion not in CRITERIA:
            raise DomainError(f"criterion must be one of {CRITERIA}")
        if self.max_features not in MAX_FEATURES:
            raise DomainError(f"max_features must be one of {MAX_FEATURES}")
        if int(self.max_depth) < 1:
            raise DomainError("max_depth must be a positive integer")
        if int(self.min_samples_split) < 2:
            raise DomainError("min_samples_split must be >= 2")
        if int(self.min_samples_leaf) < 1:
            raise DomainError("min_samples_leaf must be >= 1")
        if not self.ccp_alpha >= 0.0:
            raise DomainError("ccp_alpha must be non-negative")

    def growth_key(self) -> tuple:
        """Everything except ``ccp_alpha``, which only affects pruning."""
        return (self.criterion, self.max_depth, self.min_samples_split,
                self.min_samples_leaf, self.max_features)

    def to_dict(self) -> dict:
        return {"criterion": self.criterion, "max_depth": self.max_depth,
                "min_samples_split": self.min_samples_split,
                "min_samples_leaf": self.min_samples_leaf,
                "ccp_alpha": self.ccp_alpha, "max_features": self.max_features}

    @classmethod
    def from_dict(cls, d: dict) -> "HyperParams":
        return cls(criterion=d.get("criterion", "squared_error"),
                   max_depth=int(d.get("max_depth", 3)),
                   min_samples_split=int(d.get("min_samples_split", 2)),
                   min_samples_leaf=int(d.get("min_samples_leaf", 1)),
                   ccp_alpha=float(d.get("ccp_alpha", 0.0)),
                   max_features=d.get("max_features") or "all")


@dataclass(frozen=True, eq=False)
class TreeNode:
    id: int
    prediction: float
    n_samples: int
    dispersion: float
    impurity: float
    depth: int
    rule: SplitRule | None = None
    children: tuple[int, int] | None = None
    sample_indices: np.ndarray | None = field(default=None, repr=False)

    @property
    def is_leaf(self) -> bool:
        return self.children is None


@dataclass(frozen=True, eq=False)
class RegressionTree:
    """A fitted tree; node ids are preorder positions with the root at 0."""

    nodes: tuple[TreeNode, ...]
    hyperparams: HyperParams
    n_features: int
    feature_names: tuple[str, ...] = ()

    root = 0

    @property
    def depth(self) -> int:
        return max(node.depth for node in self.nodes)

    def leaves(self) -> list[TreeNode]:
        return [node for node in self.nodes if node.is_leaf]

    def parent_map(self) -> dict[int, int]:
        return {c: node.id for node in self.nodes if node.children for c in node.children}

    def path(self, node_id: int) -> list[tuple[TreeNode, bool]]:
        """Internal nodes from the root down to ``node_id``.

        Each entry is ``(node, went_left)``.
        """
        if not 0 <= node_id < len(self.nodes):
            raise KeyError(f"no node with id {node_id}")
        parents = self.parent_map()
        out = []
        cur = node_id
        while cur in parents:
            par = self.nodes[parents[cur]]
            out.append((par, par.children[0] == cur))
            cur = par.id
        return out[::-1]

    def leaf_for(self, x) -> TreeNode:
        x = np.asarray(x, dtype=float).reshape(-1)
        if x.shape[0] != self.n_features:
            raise ShapeError(f"expected {self.n_features} features, got {x.shape[0]}")
        node = self.nodes[0]
        while node.children is not None:
            node = self.nodes[node.children[0] if node.rule.goes_left(x) else node.children[1]]
        return node

    def apply(self, X) -> np.ndarray:
        """Leaf id for every row of ``X``."""
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise ShapeError(f"expected an (n, {self.n_features}) matrix, got {X.shape}")
        out = np.zeros(X.shape[0], dtype=np.intp)
        stack = [(0, np.arange(X.shape[0]))]
        while stack:
            nid, rows = stack.pop()
            node = self.nodes[nid]
            if node.children is None:
                out[rows] = nid
                continue
            mask = X[rows, node.rule.feature_index] <= node.rule.threshold
            stack.append((node.children[0], rows[mask]))
            stack.append((node.children[1], rows[~mask]))
        return out

    def predict_many(self, X) -> np.ndarray:
        preds = np.array([node.prediction for node in self.nodes])
        return preds[self.apply(X)]

    def structure(self) -> list[tuple]:
        """Hashable structural summary used for equality checks."""
        return [(n.id, None if n.rule is None else (n.rule.feature_index, n.rule.threshold),
                 n.prediction, n.n_samples, n.dispersion, n.children) for n in self.nodes]


def predict(tree: RegressionTree, x) -> float:
    """Route ``x`` to a leaf (``<=`` goes left) and return its prediction."""
    return tree.leaf_for(x).prediction


# ---------------------------------------------------------------------------
# split search

def n_candidate_features(p: int, max_features: str) -> int:
    if max_features == "sqrt":
        return max(1, math.ceil(math.sqrt(p)))
    if max_features == "log2":
        return max(1, math.ceil(math.log2(p))) if p > 1 else 1
    return p


def _candidate_features(p: int, max_features: str, rng) -> np.ndarray:
    k = n_candidate_features(p, max_features)
    if k >= p:
        return np.arange(p)
    return np.sort(rng.choice(p, size=k, replace=False))


def _feature_gains(xs: np.ndarray, ys: np.ndarray, criterion: str, min_leaf: int,
                   parent_imp: float):
    """Split positions and gains along one feature.

    Returns ``(positions, gains, sorted_x)`` where a position ``i`` puts the
    ``i`` smallest rows on the left.
    """
    m = ys.shape[0]
    order = np.argsort(xs, kind="stable")
    xs = xs[order]
    ys = ys[order]
    pos = np.arange(1, m)
    valid = (xs[1:] > xs[:-1]) & (pos >= min_leaf) & (m - pos >= min_leaf)
    pos = pos[valid]
    if pos.size == 0:
        return pos, np.empty(0), xs
    if criterion == "squared_error":
        c = ys - ys.mean()
        cs = np.cumsum(c)
        tot = cs[-1]
        left_mean = cs[pos - 1] / pos
        right_mean = (tot - cs[pos - 1]) / (m - pos)
        gains = pos * (m - pos) / (m * m) * (left_mean - right_mean) ** 2
    else:
        left = prefix_abs_dev(ys)
        right = prefix_abs_dev(ys[::-1].copy())
        gains = parent_imp - (left[pos - 1] + right[m - pos - 1]) / m
    return pos, gains, xs


def _midpoint(lo: float, hi: float) -> float:
    t = (lo + hi) / 2.0
    # rounding can land the midpoint on the upper value
    return lo if t >= hi else t


def _best_split_arrays(X: np.ndarray, y: np.ndarray, params: HyperParams, rng):
    m = y.shape[0]
    if m < params.min_samples_split or m < 2 * params.min_samples_leaf:
        return None
    if y.max() == y.min():
        return None
    parent_imp = impurity(y, params.criterion)
    features = _candidate_features(X.shape[1], params.max_features, rng)
    best = []  # (feature, gain, threshold)
    for f in features:
        pos, gains, xs = _feature_gains(X[:, f], y, params.criterion, params.min_samples_leaf, parent_imp)
        if gains.size == 0:
            continue
        gmax = gains.max()
        i = int(np.flatnonzero(gains >= gmax - TIE_RTOL * abs(gmax))[0])
        k = pos[i]
        best.append((int(f), float(gains[i]), _midpoint(xs[k - 1], xs[k])))
    if not best:
        return None
    gmax = max(g for _, g, _ in best)
    if not gmax > TIE_RTOL * parent_imp:
        return None
    f, g, t = next(b for b in best if b[1] >= gmax - TIE_RTOL * abs(gmax))
    return SplitRule(f, t), g


def best_split(rows, dataset: AuditDataset, params: HyperParams, rng=None):
    """Best axis-aligned split of ``rows``, or ``None``.

    Candidate thresholds are midpoints between consecutive distinct values
    of each candidate feature; both children must keep at least
    ``min_samples_leaf`` rows. Returns ``(SplitRule, gain)`` or ``None``
    when no candidate has strictly positive gain. Ties go to the lowest
    feature index, then the lowest threshold.
    """
    rows = np.asarray(rows, dtype=np.intp)
    if rng is None:
        rng = np.random.default_rng(0)
    return _best_split_arrays(dataset.features[rows], dataset.scores[rows], params, rng)


# ---------------------------------------------------------------------------
# growth and pruning

def _make_node(nid, y, rows, depth, criterion, rule=None, children=None):
    return TreeNode(id=nid, prediction=float(y.mean()), n_samples=int(y.shape[0]),
                    dispersion=float(y.std()), impurity=impurity(y, criterion),
                    depth=depth, rule=rule, children=children, sample_indices=rows)


def grow(X: np.ndarray, y: np.ndarray, params: HyperParams, rng,
         feature_names: Sequence[str] = ()) -> RegressionTree:
    """Greedy top-down growth without pruning."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    nodes: list[TreeNode | None] = []

    def build(rows, depth):
        nid = len(nodes)
        nodes.append(None)
        ys = y[rows]
        split = None
        if depth < params.max_depth:
            split = _best_split_arrays(X[rows], ys, params, rng)
        if split is None:
            nodes[nid] = _make_node(nid, ys, rows, depth, params.criterion)
            return nid
        rule, _ = split
        mask = X[rows, rule.feature_index] <= rule.threshold
        left = build(rows[mask], depth + 1)
        right = build(rows[~mask], depth + 1)
        nodes[nid] = _make_node(nid, ys, rows, depth, params.criterion, rule, (left, right))
        return nid

    build(np.arange(y.shape[0]), 0)
    return RegressionTree(tuple(nodes), params, X.shape[1], tuple(feature_names))


def fit(dataset: AuditDataset, params: HyperParams, seed: int = 0) -> RegressionTree:
    """Grow a tree on ``dataset`` and apply cost-complexity pruning."""
    if dataset.n == 0:
        raise DomainError("cannot fit a tree on an empty dataset")
    tree = grow(dataset.features, dataset.scores, params, np.random.default_rng(seed),
                dataset.schema.expanded_names())
    return prune(tree, params.ccp_alpha)


def _renumber(tree: RegressionTree, collapsed: set[int], params: HyperParams) -> RegressionTree:
    out: list[TreeNode | None] = []

    def visit(old_id, depth):
        node = tree.nodes[old_id]
        nid = len(out)
        out.append(None)
        if node.children is None or old_id in collapsed:
            out[nid] = replace(node, id=nid, depth=depth, rule=None, children=None)
            return nid
        left = visit(node.children[0], depth + 1)
        right = visit(node.children[1], depth + 1)
        out[nid] = replace(node, id=nid, depth=depth, children=(left, right))
        return nid

    visit(0, 0)
    return RegressionTree(tuple(out), params, tree.n_features, tree.feature_names)


def effective_alphas(tree: RegressionTree, collapsed: set[int] | None = None) -> dict[int, float]:
    """Weakest-link alpha of every internal node still present.

    ``(R(t) - R(T_t)) / (leaves(T_t) - 1)`` with node risk
    ``R(t) = n(t) / N * impurity(t)``.
    """
    collapsed = collapsed or set()
    total = tree.nodes[0].n_samples
    out: dict[int, float] = {}

    def visit(nid):
        node = tree.nodes[nid]
        risk = node.n_samples / total * node.impurity
        if node.children is None or nid in collapsed:
            return risk, 1
        rl, nl = visit(node.children[0])
        rr, nr = visit(node.children[1])
        sub_risk, sub_leaves = rl + rr, nl + nr
        out[nid] = (risk - sub_risk) / (sub_leaves - 1)
        return sub_risk, sub_leaves

    visit(0)
    return out


def prune(tree: RegressionTree, ccp_alpha: float) -> RegressionTree:
    """Minimal cost-complexity pruning.

    Repeatedly collapses the internal node with the smallest effective
    alpha while that alpha is at most ``ccp_alpha``.
    """
    if ccp_alpha < 0:
        raise DomainError("ccp_alpha must be non-negative")
    params = replace(tree.hyperparams, ccp_alpha=ccp_alpha)
    if ccp_alpha == 0.0:
        return RegressionTree(tree.nodes, params, tree.n_features, tree.feature_names)
    collapsed: set[int] = set()
    while True:
        alphas = effective_alphas(tree, collapsed)
        if not alphas:
            break
        weakest = min(alphas, key=lambda nid: (alphas[nid], nid))
        if alphas[weakest] > ccp_alpha:
            break
        collapsed.add(weakest)
    return _renumber(tree, collapsed, params)


# ---------------------------------------------------------------------------
# model selection

def kfold_blocks(n: int, folds: int) -> list[np.ndarray]:
    """Contiguous, near-equal index blocks."""
    return np.array_split(np.arange(n), folds)


def cv_errors(dataset: AuditDataset, grid: Sequence[HyperParams], folds: int = 5,
              seed: int = 0) -> list[float]:
    """Mean held-out squared error of every grid point.

    Folds are contiguous blocks of the dataset as given, so shuffle first.
    Grid points differing only in ``ccp_alpha`` share one grown tree per
    fold.
    """
    grid = list(grid)
    if not grid:
        raise DomainError("hyperparameter grid is empty")
    if folds < 2:
        raise DomainError("need at least 2 folds")
    if dataset.n < folds:
        raise DomainError(f"{dataset.n} rows cannot fill {folds} folds")
    X, y = dataset.features, dataset.scores
    blocks = kfold_blocks(dataset.n, folds)
    groups: dict[tuple, list[int]] = {}
    for i, hp in enumerate(grid):
        groups.setdefault(hp.growth_key(), []).append(i)
    sse = np.zeros(len(grid))
    for held in blocks:
        train = np.ones(dataset.n, dtype=bool)
        train[held] = False
        Xtr, ytr = X[train], y[train]
        for members in groups.values():
            grown = grow(Xtr, ytr, grid[members[0]], np.random.default_rng(seed))
            for i in members:
                tree = prune(grown, grid[i].ccp_alpha)
                resid = y[held] - tree.predict_many(X[held])
                sse[i] += float(np.mean(resid ** 2))
    return list(sse / folds)


def grid_search_cv(dataset: AuditDataset, grid: Iterable[HyperParams], folds: int = 5,
                   seed: int = 0) -> HyperParams:
    """Grid point with the lowest cross-validated squared error.

    Ties go to the point declared first.
    """
    grid = list(grid)
    errors = cv_errors(dataset, grid, folds, seed)
    best = 0
    for i, err in enumerate(errors):
        if err < errors[best]:
            best = i
    return grid[best]


def expand_grid(**axes) -> list[HyperParams]:
    """Cartesian product of hyperparameter value lists, in a fixed order."""
    order = ["criterion", "ccp_alpha", "max_depth", "min_samples_leaf",
             "min_samples_split", "max_features"]
    keys = [k for k in order if k in axes] + [k for k in axes if k not in order]
    points: list[dict] = [{}]
    for k in keys:
        points = [dict(p, **{k: v}) for p in points for v in axes[k]]
    return [HyperParams(**p) for p in points]


# values of the published tuning grid
FULL_GRID_AXES = {
    "criterion": ["squared_error", "absolute_error"],
    "ccp_alpha": [0.0, 0.0001, 0.0005, 0.001],
    "max_depth": [3, 4],
    "min_samples_leaf": [10, 30, 50, 60, 100],
    "min_samples_split": [10, 30, 50, 60, 100],
    "max_features": ["all", "log2", "sqrt"],
}


def default_grid() -> list[HyperParams]:
    return expand_grid(**FULL_GRID_AXES)


# ---------------------------------------------------------------------------
# classification

@dataclass(frozen=True)
class ClassificationTree:
    tree: RegressionTree
    classes: tuple

    def predict(self, x):
        return self.classes[int(self.tree.leaf_for(x).prediction)]


def _class_impurity(counts: np.ndarray, criterion: str) -> np.ndarray:
    """Row-wise impurity of class-count rows."""
    tot = counts.sum(axis=-1, keepdims=True)
    p = counts / np.maximum(tot, 1)
    if criterion == "gini":
        return np.sum(p * (1.0 - p), axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        logs = np.where(p > 0, np.log2(np.where(p > 0, p, 1.0)), 0.0)
    return -np.sum(p * logs, axis=-1)


def fit_classifier(X, labels, max_depth: int = 3, min_samples_leaf: int = 1,
                   criterion: str = "gini") -> ClassificationTree:
    """Greedy classification tree maximising information gain.

    Leaves predict the majority label (ties to the first class in sorted
    order).
    """
    if criterion not in ("gini", "entropy"):
        raise DomainError("criterion must be 'gini' or 'entropy'")
    X = np.asarray(X, dtype=float)
    classes, codes = np.unique(np.asarray(labels), return_inverse=True)
    k = classes.size
    onehot = np.eye(k)[codes]
    nodes: list[TreeNode | None] = []

    def leaf_stats(rows):
        counts = onehot[rows].sum(axis=0)
        imp = float(_class_impurity(counts, criterion))
        return float(np.argmax(counts)), imp

    def build(rows, depth):
        nid = len(nodes)
        nodes.append(None)
        pred, imp = leaf_stats(rows)
        best = None
        if depth < max_depth and rows.size >= 2 * min_samples_leaf and imp > 0:
            m = rows.size
            for f in range(X.shape[1]):
                order = np.argsort(X[rows, f], kind="stable")
                xs = X[rows, f][order]
                cum = np.cumsum(onehot[rows][order], axis=0)
                pos = np.arange(1, m)
                ok = (xs[1:] > xs[:-1]) & (pos >= min_samples_leaf) & (m - pos >= min_samples_leaf)
                pos = pos[ok]
                if pos.size == 0:
                    continue
                left = cum[pos - 1]
                right = cum[-1] - left
                w = pos / m
                gains = imp - (w * _class_impurity(left, criterion) + (1 - w) * _class_impurity(right, criterion))
                i = int(np.argmax(gains))
                if gains[i] > 1e-12 and (best is None or gains[i] > best[0] + 1e-12):
                    best = (float(gains[i]), f, _midpoint(xs[pos[i] - 1], xs[pos[i]]))
        if best is None:
            nodes[nid] = TreeNode(nid, pred, int(rows.size), 0.0, imp, depth, sample_indices=rows)
            return nid
        _, f, t = best
        mask = X[rows, f] <= t
        left = build(rows[mask], depth + 1)
        right = build(rows[~mask], depth + 1)
        nodes[nid] = TreeNode(nid, pred, int(rows.size), 0.0, imp, depth, SplitRule(f, t),
                              (left, right), rows)
        return nid

    build(np.arange(X.shape[0]), 0)
    params = HyperParams(max_depth=max_depth, min_samples_leaf=min_samples_leaf)
    return ClassificationTree(RegressionTree(tuple(nodes), params, X.shape[1]), tuple(classes.tolist()))
