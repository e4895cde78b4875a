"""Serialization of trees and reports: JSON, Graphviz DOT and plain text."""

from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path

from .cart import HyperParams, RegressionTree, SplitRule, TreeNode
from .conformal import BiasReport, node_intervals
from .errors import SchemaError
from .regions import ambient_from_schema, path_conditions, region_from_path


def dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=False, allow_nan=False) + "\n"


def write_atomic(path, text: str):
    """Write ``text`` to ``path`` through a temporary file and a rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# ---------------------------------------------------------------------------
# trees

def tree_to_dict(tree: RegressionTree, intervals=None, alpha: float | None = None) -> dict:
    """JSON-ready tree. ``intervals`` maps node id to ``(lower, upper)``."""
    names = list(tree.feature_names)
    nodes = []
    for node in tree.nodes:
        d = {"id": node.id}
        if node.rule is None:
            d["rule"] = None
        else:
            f = node.rule.feature_index
            d["rule"] = {"feature_index": f, "feature": names[f] if names else f"x{f + 1}",
                         "threshold": node.rule.threshold}
        d.update(prediction=node.prediction, n_samples=node.n_samples,
                 dispersion=node.dispersion, impurity=node.impurity, depth=node.depth,
                 children=list(node.children) if node.children else None)
        if intervals is not None and node.id in intervals:
            lo, hi = intervals[node.id]
            d["interval"] = {"lower": lo, "upper": hi}
        nodes.append(d)
    out = {"n_features": tree.n_features, "feature_names": names,
           "hyperparams": tree.hyperparams.to_dict()}
    if alpha is not None:
        out["alpha"] = alpha
    out["nodes"] = nodes
    return out


def tree_from_dict(d: dict) -> tuple[RegressionTree, dict]:
    """Inverse of :func:`tree_to_dict`; returns the tree and any stored intervals."""
    try:
        nodes = []
        intervals = {}
        for i, nd in enumerate(d["nodes"]):
            if nd["id"] != i:
                raise SchemaError("node ids must be consecutive from 0")
            rule = None
            if nd.get("rule"):
                rule = SplitRule(int(nd["rule"]["feature_index"]), float(nd["rule"]["threshold"]))
            children = tuple(nd["children"]) if nd.get("children") else None
            nodes.append(TreeNode(id=i, prediction=float(nd["prediction"]),
                                  n_samples=int(nd["n_samples"]), dispersion=float(nd["dispersion"]),
                                  impurity=float(nd.get("impurity", nd["dispersion"] ** 2)),
                                  depth=int(nd.get("depth", 0)), rule=rule, children=children))
            if "interval" in nd:
                intervals[i] = (float(nd["interval"]["lower"]), float(nd["interval"]["upper"]))
        tree = RegressionTree(tuple(nodes), HyperParams.from_dict(d.get("hyperparams", {})),
                              int(d["n_features"]), tuple(d.get("feature_names", ())))
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"malformed tree JSON: {exc}") from None
    return tree, intervals


def load_tree(path) -> tuple[RegressionTree, dict, float | None]:
    d = json.loads(Path(path).read_text(encoding="utf-8"))
    tree, intervals = tree_from_dict(d)
    return tree, intervals, d.get("alpha")


def _fmt(x: float) -> str:
    return f"{x:.4g}"


def tree_to_dot(tree: RegressionTree, intervals=None, alpha: float | None = None,
                flagged=()) -> str:
    """Graphviz source; labels show the rule, n, mean, sd and interval."""
    names = list(tree.feature_names)
    flagged = set(flagged)
    lines = ["digraph Tree {",
             'node [shape=box, style="rounded,filled", fillcolor="white", fontname="helvetica"];',
             'edge [fontname="helvetica"];']
    for node in tree.nodes:
        parts = [f"node #{node.id}"]
        if node.rule is not None:
            f = node.rule.feature_index
            fname = names[f] if names else f"x{f + 1}"
            parts.append(f"{fname} <= {_fmt(node.rule.threshold)}")
        parts += [f"n = {node.n_samples}", f"y = {_fmt(node.prediction)}", f"sd = {_fmt(node.dispersion)}"]
        if intervals and node.id in intervals:
            lo, hi = intervals[node.id]
            tag = f"CI({_fmt(alpha)})" if alpha is not None else "CI"
            parts.append(f"{tag} = [{_fmt(lo)}, {_fmt(hi)}]")
        label = "\\n".join(p.replace('"', '\\"') for p in parts)
        fill = ', fillcolor="#f4a582"' if node.id in flagged else ""
        lines.append(f'{node.id} [label="{label}"{fill}];')
    for node in tree.nodes:
        if node.children:
            left, right = node.children
            lines.append(f'{node.id} -> {left} [label="True"];')
            lines.append(f'{node.id} -> {right} [label="False"];')
    lines.append("}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# reports

def report_intervals(report: BiasReport) -> dict:
    ivs = node_intervals(report.tree, report.data, report.alpha_star)
    return {iv.node_id: (iv.lower, iv.upper) for iv in ivs}


def report_to_dict(report: BiasReport, ambient=None) -> dict:
    """JSON-ready report; regions use the original feature names."""
    data, tree = report.data, report.tree
    if ambient is None:
        ambient = ambient_from_schema(data.schema, data.ambient_bounds())
    nodes = []
    for v in report.verdicts:
        node = tree.nodes[v.node_id]
        region = region_from_path(tree, v.node_id, ambient, data.encoding_map)
        nodes.append({
            "node_id": v.node_id,
            "region": region.to_dict(),
            "conditions": path_conditions(tree, v.node_id, data.encoding_map),
            "prediction": node.prediction,
            "n": node.n_samples,
            "optimized_alpha": v.optimized_alpha,
            "confidence_level": v.confidence_level,
            "detected": v.detected,
        })
    return {
        "alpha_star": report.alpha_star,
        "epochs": report.epochs,
        "bag_size": report.bag_size,
        "orientation": report.orientation,
        "global_detected": report.global_detected,
        "epoch_votes": list(report.epoch_votes),
        "hyperparams": report.hyperparams.to_dict() if report.hyperparams else None,
        "nodes": nodes,
    }


def render_summary(report: BiasReport) -> str:
    """Plain-text verdict plus the conditions describing each flagged leaf."""
    data, tree = report.data, report.tree
    lines = ["Bias Detected" if report.global_detected else "No Bias Detected",
             f"threshold alpha* = {report.alpha_star:g}, epochs = {report.epochs}, "
             f"bag size = {report.bag_size}, orientation = {report.orientation}"]
    lines.append("")
    lines.append(f"{'node':>5}  {'n':>6}  {'mean':>8}  {'alpha':>6}  {'conf':>5}  flagged")
    for v in report.verdicts:
        node = tree.nodes[v.node_id]
        a = "-" if v.optimized_alpha is None else f"{v.optimized_alpha:.2f}"
        c = "-" if v.confidence_level is None else f"{v.confidence_level:.2f}"
        lines.append(f"{v.node_id:>5}  {node.n_samples:>6}  {node.prediction:>8.4f}  {a:>6}  {c:>5}  "
                     f"{'yes' if v.detected else 'no'}")
    for v in report.flagged():
        conds = path_conditions(tree, v.node_id, data.encoding_map)
        lines.append("")
        lines.append(f"Node {v.node_id} (confidence {v.confidence_level:.2f}):")
        lines.append("  " + (" AND ".join(conds) if conds else "(entire population)"))
    return "\n".join(lines) + "\n"
