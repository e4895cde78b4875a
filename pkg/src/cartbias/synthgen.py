"""Synthetic audit studies: false discoveries on noise, and region recovery.

Features are uniform on [-10, 10]^p. The no-bias study draws scores from
U(0, 1); the planted-region studies draw baseline scores from U(0.8, 1.0)
and give points inside a box around a random center U(0.3, 0.6) scores.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .cart import HyperParams, expand_grid
from .conformal import BiasReport, run_bias_detection
from .data import AuditDataset, FeatureSchema
from .errors import DomainError
from .regions import Region, estimated_region_union_cvr, region_from_path

LOW, HIGH = -10.0, 10.0
KINDS = ("no_bias_fdr", "fixed_region_varying_points", "fixed_points_varying_region")

# full-scale study grids
FULL_FDR_SIZES = (500, 750, 1000, 2000, 3000, 6000, 8000)
FULL_FDR_DIMS = (2, 3, 4, 5)
FULL_CVR_SIZES = (150, 200, 300, 400, 500, 750, 1000, 2000)
FULL_CVR_DIMS = (2, 3, 4)


def experiment_grid() -> list[HyperParams]:
    """Compact tuning grid used by the simulation studies."""
    return expand_grid(max_depth=[3, 4], min_samples_leaf=[10, 30],
                       min_samples_split=[30], ccp_alpha=[0.0, 0.001])


def default_half_width(p: int, volume_fraction: float = 0.1) -> float:
    """Half-width of a cube covering ``volume_fraction`` of [-10, 10]^p."""
    return 0.5 * (HIGH - LOW) * volume_fraction ** (1.0 / p)


def _schema(p: int) -> FeatureSchema:
    return FeatureSchema.continuous([f"x{i + 1}" for i in range(p)])


def ambient(p: int) -> dict:
    return {f"x{i + 1}": (LOW, HIGH) for i in range(p)}


def gen_no_bias(n: int, p: int, rng) -> AuditDataset:
    if n < 1:
        raise DomainError("n must be >= 1")
    X = rng.uniform(LOW, HIGH, size=(n, p))
    y = rng.uniform(0.0, 1.0, size=n)
    return AuditDataset(_schema(p), X, y, "performance")


def true_region(p: int, center: Sequence[float], half_width: float) -> Region:
    c = np.asarray(center, dtype=float)
    lo = np.clip(c - half_width, LOW, HIGH)
    hi = np.clip(c + half_width, LOW, HIGH)
    return Region.box(lo, hi, [LOW] * p, [HIGH] * p)


def planted_scores(X: np.ndarray, center, half_width: float, rng) -> np.ndarray:
    inside = np.max(np.abs(X - np.asarray(center, dtype=float)), axis=1) <= half_width
    y = rng.uniform(0.8, 1.0, size=X.shape[0])
    y[inside] = rng.uniform(0.3, 0.6, size=int(inside.sum()))
    return y


def gen_planted_region(n: int, p: int, center, half_width: float, rng) -> tuple[AuditDataset, Region]:
    """Uniform features with a low-score box (L-infinity ball) around ``center``."""
    c = np.asarray(center, dtype=float)
    if c.shape != (p,) or np.any(c < LOW) or np.any(c > HIGH):
        raise DomainError(f"center must be a point in [{LOW}, {HIGH}]^{p}")
    if not half_width > 0:
        raise DomainError("half_width must be positive")
    X = rng.uniform(LOW, HIGH, size=(n, p))
    y = planted_scores(X, c, half_width, rng)
    return AuditDataset(_schema(p), X, y, "performance"), true_region(p, c, half_width)


def draw_center(p: int, half_width: float, rng) -> np.ndarray:
    """Center such that the box stays inside the ambient space."""
    h = min(half_width, (HIGH - LOW) / 2)
    return rng.uniform(LOW + h, HIGH - h, size=p)


def estimated_regions(report: BiasReport) -> list[Region]:
    """Leaf regions flagged at the report's threshold.

    Falls back to the lowest-prediction leaf (highest for residual scores)
    when nothing is flagged.
    """
    tree = report.tree
    p = tree.n_features
    flagged = [v.node_id for v in report.verdicts if v.detected]
    if not flagged:
        leaves = tree.leaves()
        pick = min if report.orientation == "performance" else max
        flagged = [pick(leaves, key=lambda node: (node.prediction, node.id)).id]
    return [region_from_path(tree, nid, ambient(p)) for nid in flagged]


@dataclass
class ExperimentConfig:
    kind: str = "no_bias_fdr"
    sample_sizes: list = field(default_factory=lambda: [500])
    dims: list = field(default_factory=lambda: [2])
    replications: int = 100
    alpha_star: float = 0.2
    bag_size: int = 5
    epochs: int = 1
    half_width: float | None = None
    seed: int = 0
    grid: list | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise DomainError(f"kind must be one of {KINDS}")
        if self.replications < 1:
            raise DomainError("replications must be >= 1")
        if any(n < 10 for n in self.sample_sizes):
            raise DomainError("sample sizes must be >= 10")
        if any(p not in (2, 3, 4, 5) for p in self.dims):
            raise DomainError("dims must be drawn from {2, 3, 4, 5}")
        if not 0 < self.alpha_star < 1:
            raise DomainError("alpha_star must lie in (0, 1)")
        if self.half_width is not None and not self.half_width > 0:
            raise DomainError("half_width must be positive")

    def hyperparams(self) -> list[HyperParams]:
        if self.grid is None:
            return experiment_grid()
        return [g if isinstance(g, HyperParams) else HyperParams.from_dict(g) for g in self.grid]

    def width_for(self, p: int) -> float:
        return self.half_width if self.half_width is not None else default_half_width(p)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["grid"] = [hp.to_dict() for hp in self.hyperparams()]
        return d


@dataclass(frozen=True)
class CellResult:
    p: int
    n: int
    mean: float
    half_width: float
    reps: int
    values: tuple = field(default=(), repr=False)

    @property
    def ci_low(self) -> float:
        return max(0.0, self.mean - self.half_width)

    @property
    def ci_high(self) -> float:
        return min(1.0, self.mean + self.half_width)


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    metric: str
    cells: list

    def cell(self, p: int, n: int) -> CellResult:
        return next(c for c in self.cells if c.p == p and c.n == n)


def summarize(values: Sequence[float]) -> tuple[float, float]:
    """Mean and normal-approximation 95% half-width."""
    v = np.asarray(values, dtype=float)
    mean = float(v.mean())
    if v.size < 2:
        return mean, 0.0
    return mean, float(1.96 * v.std(ddof=1) / math.sqrt(v.size))


def _cell_seed(seed: int, p: int, n: int, *extra: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([seed, p, n, *extra])


def _rep_seed(seed: int, p: int, n: int, rep: int, stream: int) -> np.random.Generator:
    return np.random.default_rng(_cell_seed(seed, p, n, rep, stream))


def _detect_seed(seed: int, p: int, n: int, rep: int) -> int:
    return int(_cell_seed(seed, p, n, rep, 9).generate_state(1, dtype=np.uint64)[0])


def fdr_replication(config: ExperimentConfig, p: int, n: int, rep: int) -> float:
    data = gen_no_bias(n, p, _rep_seed(config.seed, p, n, rep, 0))
    report = run_bias_detection(data, config.hyperparams(), config.alpha_star, config.epochs,
                                config.bag_size, _detect_seed(config.seed, p, n, rep))
    return float(report.global_detected)


def cvr_replication(config: ExperimentConfig, p: int, n: int, rep: int) -> float:
    h = config.width_for(p)
    if config.kind == "fixed_region_varying_points":
        center = draw_center(p, h, np.random.default_rng(_cell_seed(config.seed, p, n, 0, 1)))
        rng = _rep_seed(config.seed, p, n, rep, 0)
        X = rng.uniform(LOW, HIGH, size=(n, p))
    else:
        X = np.random.default_rng(_cell_seed(config.seed, p, n, 0, 2)).uniform(LOW, HIGH, size=(n, p))
        rng = _rep_seed(config.seed, p, n, rep, 0)
        center = draw_center(p, h, rng)
    y = planted_scores(X, center, h, rng)
    data = AuditDataset(_schema(p), X, y, "performance")
    report = run_bias_detection(data, config.hyperparams(), config.alpha_star, config.epochs,
                                config.bag_size, _detect_seed(config.seed, p, n, rep))
    return estimated_region_union_cvr(true_region(p, center, h), estimated_regions(report))


def _run(config: ExperimentConfig, one_rep, metric: str, workers: int = 1) -> ExperimentResult:
    jobs = [(p, n, r) for p in config.dims for n in config.sample_sizes
            for r in range(config.replications)]
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(workers) as pool:
            values = list(pool.map(one_rep, [config] * len(jobs), *zip(*jobs)))
    else:
        values = [one_rep(config, p, n, r) for p, n, r in jobs]
    by_cell: dict[tuple[int, int], list[float]] = {}
    for (p, n, _), v in zip(jobs, values):
        by_cell.setdefault((p, n), []).append(v)
    cells = []
    for (p, n), vals in by_cell.items():
        mean, hw = summarize(vals)
        cells.append(CellResult(p, n, mean, hw, len(vals), tuple(vals)))
    return ExperimentResult(config, metric, cells)


def run_fdr_experiment(config: ExperimentConfig, workers: int = 1) -> ExperimentResult:
    """Fraction of no-bias replications reported as biased, per (p, n) cell."""
    if config.kind != "no_bias_fdr":
        raise DomainError("run_fdr_experiment needs kind 'no_bias_fdr'")
    return _run(config, fdr_replication, "fdr", workers)


def run_cvr_experiment(config: ExperimentConfig, workers: int = 1) -> ExperimentResult:
    """Mean coverage ratio of the recovered region, per (p, n) cell.

    ``fixed_region_varying_points`` keeps one center per cell and redraws
    the points every replication; ``fixed_points_varying_region`` keeps one
    point cloud per cell and redraws the center.
    """
    if config.kind not in KINDS[1:]:
        raise DomainError("run_cvr_experiment needs a planted-region kind")
    return _run(config, cvr_replication, "cvr", workers)
