"""Axis-aligned regions from tree paths, hypervolumes and the coverage ratio."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .cart import RegressionTree
from .data import CATEGORICAL, FeatureSchema
from .errors import DomainError


@dataclass(frozen=True)
class Region:
    """Box over the original (pre one-hot) feature space.

    ``bounds`` maps every dimension name to either a ``(low, high)`` pair
    or a frozenset of admitted categories; ``ambient`` gives the same for
    the full feature space. Dimension order follows ``ambient``.
    """

    bounds: dict
    ambient: dict

    def __post_init__(self):
        full = {}
        for name, amb in self.ambient.items():
            b = self.bounds.get(name, amb)
            if isinstance(amb, (set, frozenset)):
                b = frozenset(b)
                if not b:
                    raise DomainError(f"dimension {name!r}: empty category subset")
            else:
                b = (float(b[0]), float(b[1]))
                if b[0] > b[1]:
                    raise DomainError(f"dimension {name!r}: lower bound above upper bound")
            full[name] = b
        extra = set(self.bounds) - set(self.ambient)
        if extra:
            raise DomainError(f"bounds name unknown dimensions {sorted(extra)}")
        object.__setattr__(self, "bounds", full)
        object.__setattr__(self, "ambient", {k: frozenset(v) if isinstance(v, (set, frozenset))
                                             else (float(v[0]), float(v[1]))
                                             for k, v in self.ambient.items()})

    @classmethod
    def box(cls, low: Sequence[float], high: Sequence[float], ambient_low: Sequence[float],
            ambient_high: Sequence[float], names: Sequence[str] | None = None) -> "Region":
        names = list(names) if names is not None else [f"x{i + 1}" for i in range(len(low))]
        amb = {n: (a, b) for n, a, b in zip(names, ambient_low, ambient_high)}
        return cls({n: (a, b) for n, a, b in zip(names, low, high)}, amb)

    def constrained(self) -> dict:
        """Only the dimensions narrower than the ambient space."""
        return {k: v for k, v in self.bounds.items() if v != self.ambient[k]}

    def to_dict(self) -> dict:
        out = {}
        for name, b in self.bounds.items():
            if isinstance(b, frozenset):
                order = sorted(self.ambient[name])
                out[name] = {"categories": [c for c in order if c in b]}
            else:
                out[name] = {"low": b[0], "high": b[1]}
        return out


def ambient_from_schema(schema: FeatureSchema, bounds: Sequence[tuple[float, float]]) -> dict:
    """Ambient space from per-expanded-column bounds (categoricals use all categories)."""
    amb = {}
    j = 0
    for col in schema.columns:
        if col.kind == CATEGORICAL:
            amb[col.name] = frozenset(col.categories)
        else:
            amb[col.name] = tuple(bounds[j])
        j += col.width
    return amb


def region_from_path(tree: RegressionTree, node_id: int, ambient: dict,
                     encoding_map: Sequence[tuple[str, str | None]] | None = None) -> Region:
    """Intersect the ambient space with every split on the root-to-node path.

    Going left caps the feature at the threshold, going right raises its
    floor to the threshold. A split on a one-hot column keeps (right) or
    drops (left) that category.
    """
    if encoding_map is None:
        names = list(ambient)
        encoding_map = [(names[i], None) for i in range(tree.n_features)]
    bounds = dict(ambient)
    for node, went_left in tree.path(node_id):
        name, cat = encoding_map[node.rule.feature_index]
        cur = bounds[name]
        if cat is not None:
            bounds[name] = cur - {cat} if went_left else cur & {cat}
        else:
            lo, hi = cur
            t = node.rule.threshold
            bounds[name] = (lo, min(hi, t)) if went_left else (max(lo, t), hi)
    return Region(bounds, ambient)


def path_conditions(tree: RegressionTree, node_id: int,
                    encoding_map: Sequence[tuple[str, str | None]] | None = None,
                    names: Sequence[str] | None = None) -> list[str]:
    """Human-readable split conditions along the path, merged per feature."""
    lows: dict[str, float] = {}
    highs: dict[str, float] = {}
    cats_in: dict[str, str] = {}
    cats_out: dict[str, list[str]] = {}
    order: list[str] = []
    for node, went_left in tree.path(node_id):
        f = node.rule.feature_index
        if encoding_map is not None:
            name, cat = encoding_map[f]
        else:
            name = names[f] if names else f"x{f + 1}"
            cat = None
        if name not in order:
            order.append(name)
        t = node.rule.threshold
        if cat is not None:
            if went_left:
                cats_out.setdefault(name, []).append(cat)
            else:
                cats_in[name] = cat
        elif went_left:
            highs[name] = min(highs.get(name, np.inf), t)
        else:
            lows[name] = max(lows.get(name, -np.inf), t)
    out = []
    for name in order:
        if name in cats_in:
            out.append(f"{name} = {cats_in[name]}")
        elif name in cats_out:
            out.append(f"{name} not in {{{', '.join(cats_out[name])}}}")
        if name in lows and name in highs:
            out.append(f"{lows[name]:.6g} < {name} <= {highs[name]:.6g}")
        elif name in lows:
            out.append(f"{name} > {lows[name]:.6g}")
        elif name in highs:
            out.append(f"{name} <= {highs[name]:.6g}")
    return out


def hypervolume(region: Region) -> float:
    """Product of interval widths; categorical dimensions contribute the
    fraction of categories admitted."""
    vol = 1.0
    for name, b in region.bounds.items():
        if isinstance(b, frozenset):
            vol *= len(b) / len(region.ambient[name])
        else:
            vol *= b[1] - b[0]
    return vol


def intersect(a: Region, b: Region) -> Region | None:
    """Per-dimension intersection, or None when any dimension is empty."""
    if a.ambient != b.ambient:
        raise DomainError("regions live in different ambient spaces")
    bounds = {}
    for name in a.ambient:
        x, y = a.bounds[name], b.bounds[name]
        if isinstance(x, frozenset):
            common = x & y
            if not common:
                return None
            bounds[name] = common
        else:
            lo, hi = max(x[0], y[0]), min(x[1], y[1])
            if hi <= lo:
                return None
            bounds[name] = (lo, hi)
    return Region(bounds, a.ambient)


def _overlap(a: Region, b: Region) -> float:
    common = intersect(a, b)
    return 0.0 if common is None else hypervolume(common)


def _cvr(overlap: float, vol_true: float, vol_est: float) -> float:
    return 0.5 * (overlap / vol_true + overlap / vol_est)


def coverage_ratio(true_region: Region, estimated: Region) -> float:
    """Mean of the overlap's share of the true and of the estimated volume."""
    vt, ve = hypervolume(true_region), hypervolume(estimated)
    if vt <= 0 or ve <= 0:
        raise DomainError("coverage ratio needs regions of positive volume")
    return _cvr(_overlap(true_region, estimated), vt, ve)


def estimated_region_union_cvr(true_region: Region, estimated: Sequence[Region]) -> float:
    """Coverage ratio against the union of pairwise-disjoint estimated regions."""
    estimated = list(estimated)
    if not estimated:
        raise DomainError("no estimated regions")
    for i in range(len(estimated)):
        for j in range(i + 1, len(estimated)):
            if _overlap(estimated[i], estimated[j]) > 0.0:
                raise DomainError("estimated regions overlap")
    vt = hypervolume(true_region)
    ve = sum(hypervolume(r) for r in estimated)
    if vt <= 0 or ve <= 0:
        raise DomainError("coverage ratio needs regions of positive volume")
    return _cvr(sum(_overlap(true_region, r) for r in estimated), vt, ve)
