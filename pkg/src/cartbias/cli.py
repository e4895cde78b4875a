"""Command-line entry point: ``detect``, ``simulate``, ``export`` and ``rerun``."""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from pathlib import Path

from . import __version__
from .cart import HyperParams, default_grid, expand_grid
from .conformal import run_bias_detection
from .data import load_csv, load_schema, write_csv, write_schema
from .errors import CartBiasError
from .export import (dumps, load_tree, render_summary, report_intervals, report_to_dict,
                     tree_to_dict, tree_to_dot, write_atomic)
from .synthgen import (FULL_CVR_DIMS, FULL_CVR_SIZES, FULL_FDR_DIMS, FULL_FDR_SIZES,
                       ExperimentConfig, default_half_width, draw_center, experiment_grid,
                       gen_no_bias, gen_planted_region, run_cvr_experiment, run_fdr_experiment)

log = logging.getLogger("cartbias")

OUT_ENV = "CARTBIAS_OUT"
CVR_KINDS = {
    "fixed-region": "fixed_region_varying_points",
    "fixed_region_varying_points": "fixed_region_varying_points",
    "varying-region": "fixed_points_varying_region",
    "fixed_points_varying_region": "fixed_points_varying_region",
}


def _default_out() -> str:
    return os.environ.get(OUT_ENV, "cartbias-out")


def load_grid(spec, fallback) -> list[HyperParams]:
    """Grid from ``None`` (fallback), ``full``, ``compact`` or a JSON file.

    A JSON grid is either a list of hyperparameter objects or an object of
    value lists that is expanded as a Cartesian product.
    """
    if spec is None:
        return fallback()
    if isinstance(spec, list):
        return [HyperParams.from_dict(d) for d in spec]
    if spec in ("full", "paper"):
        return default_grid()
    if spec == "compact":
        return experiment_grid()
    raw = json.loads(Path(spec).read_text(encoding="utf-8"))
    if isinstance(raw, dict):
        axes = {k: [None if v in (None, "None") else v for v in vals] for k, vals in raw.items()}
        return expand_grid(**axes)
    return [HyperParams.from_dict(d) for d in raw]


# ---------------------------------------------------------------------------
# detect

def cmd_detect(args) -> int:
    schema, score_column, orientation = load_schema(args.schema)
    data = load_csv(args.data, schema, score_column, orientation)
    grid = load_grid(args.grid, default_grid)
    if not 0 < args.alpha < 1:
        raise CartBiasError("--alpha must lie in (0, 1)")
    log.info("loaded %d rows x %d columns; grid of %d points", data.n, data.p, len(grid))
    report = run_bias_detection(data, grid, args.alpha, args.epochs, args.bag, args.seed, args.folds)
    intervals = report_intervals(report)
    flagged = [v.node_id for v in report.flagged()]
    manifest = {
        "command": "detect", "version": __version__,
        "data": str(args.data), "schema": str(args.schema),
        "alpha": args.alpha, "epochs": args.epochs, "bag": args.bag, "folds": args.folds,
        "seed": args.seed, "grid": [hp.to_dict() for hp in grid],
    }
    summary = render_summary(report)
    outputs = {
        "report.json": dumps(report_to_dict(report)),
        "tree.json": dumps(tree_to_dict(report.tree, intervals, args.alpha)),
        "tree.dot": tree_to_dot(report.tree, intervals, args.alpha, flagged),
        "summary.txt": summary,
        "manifest.json": dumps(manifest),
    }
    out = Path(args.out)
    for name, text in outputs.items():
        write_atomic(out / name, text)
    sys.stdout.write(summary)
    return 0


# ---------------------------------------------------------------------------
# simulate

def _experiment_config(args) -> ExperimentConfig:
    if args.study == "fdr":
        kind = "no_bias_fdr"
        sizes, dims, reps = FULL_FDR_SIZES, FULL_FDR_DIMS, 500
    else:
        kind = CVR_KINDS[args.kind]
        sizes, dims, reps = FULL_CVR_SIZES, FULL_CVR_DIMS, 100
    if not args.full:
        sizes = args.n or [500 if kind == "no_bias_fdr" else 2000]
        dims = args.p or [2]
        reps = args.reps if args.reps is not None else (100 if kind == "no_bias_fdr" else 30)
    grid = load_grid(args.grid, experiment_grid)
    return ExperimentConfig(kind=kind, sample_sizes=list(sizes), dims=list(dims), replications=reps,
                            alpha_star=args.alpha, bag_size=args.bag, epochs=args.epochs,
                            half_width=args.half_width, seed=args.seed,
                            grid=[hp.to_dict() for hp in grid])


def results_csv(result) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["p", "n", "metric", "mean", "ci_low", "ci_high", "reps"])
    for c in result.cells:
        w.writerow([c.p, c.n, result.metric, repr(c.mean), repr(c.ci_low), repr(c.ci_high), c.reps])
    return buf.getvalue()


def plot_data(result) -> dict:
    series = {}
    for c in result.cells:
        s = series.setdefault(str(c.p), {"n": [], "mean": [], "ci_low": [], "ci_high": []})
        s["n"].append(c.n)
        s["mean"].append(c.mean)
        s["ci_low"].append(c.ci_low)
        s["ci_high"].append(c.ci_high)
    return {"metric": result.metric, "x": "n", "series": series}


def run_experiment(config: ExperimentConfig, out: Path, workers: int = 1):
    if config.kind == "no_bias_fdr":
        result = run_fdr_experiment(config, workers)
    else:
        result = run_cvr_experiment(config, workers)
    manifest = {"command": "simulate", "version": __version__, "config": config.to_dict()}
    write_atomic(out / "results.csv", results_csv(result))
    write_atomic(out / "plot_data.json", dumps(plot_data(result)))
    write_atomic(out / "manifest.json", dumps(manifest))
    return result


def cmd_simulate(args) -> int:
    try:
        config = _experiment_config(args)
    except CartBiasError as exc:
        args.parser.error(str(exc))
    result = run_experiment(config, Path(args.out), args.workers)
    sys.stdout.write(results_csv(result))
    return 0


def cmd_generate(args) -> int:
    """Write a synthetic scored dataset plus its schema sidecar."""
    import numpy as np
    rng = np.random.default_rng(args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.design == "no-bias":
        data = gen_no_bias(args.n, args.p, rng)
        truth = None
    else:
        h = args.half_width if args.half_width is not None else default_half_width(args.p)
        center = draw_center(args.p, h, rng)
        data, region = gen_planted_region(args.n, args.p, center, h, rng)
        truth = {"center": center.tolist(), "half_width": h, "region": region.to_dict()}
    write_csv(out / "data.csv", data, "score")
    write_schema(out / "schema.json", data.schema, "score", data.orientation)
    if truth is not None:
        write_atomic(out / "truth.json", dumps(truth))
    print(f"wrote {data.n} rows to {out / 'data.csv'}")
    return 0


# ---------------------------------------------------------------------------
# export / rerun

def cmd_export(args) -> int:
    tree, intervals, alpha = load_tree(args.tree)
    if args.format == "dot":
        text = tree_to_dot(tree, intervals, alpha)
    else:
        text = dumps(tree_to_dict(tree, intervals or None, alpha))
    if args.output:
        write_atomic(args.output, text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_rerun(args) -> int:
    """Reproduce a previous run from its manifest."""
    manifest = json.loads(Path(args.manifest).read_text(encoding="utf-8"))
    if manifest.get("command") == "detect":
        ns = argparse.Namespace(data=manifest["data"], schema=manifest["schema"],
                                alpha=manifest["alpha"], epochs=manifest["epochs"],
                                bag=manifest["bag"], folds=manifest["folds"], seed=manifest["seed"],
                                grid=manifest["grid"], out=args.out)
        return cmd_detect(ns)
    if manifest.get("command") == "simulate":
        config = ExperimentConfig(**manifest["config"])
        result = run_experiment(config, Path(args.out), args.workers)
        sys.stdout.write(results_csv(result))
        return 0
    raise CartBiasError(f"{args.manifest}: unknown manifest command")


# ---------------------------------------------------------------------------

def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cartbias",
                                     description="Find feature-space regions where a model underperforms.")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    det = sub.add_parser("detect", help="audit a file of per-sample performance scores")
    det.add_argument("--data", required=True, help="CSV with feature and score columns")
    det.add_argument("--schema", required=True, help="JSON schema sidecar")
    det.add_argument("--alpha", type=float, default=0.20, help="detection threshold alpha* (default 0.20)")
    det.add_argument("--epochs", type=_positive_int, default=1)
    det.add_argument("--bag", type=_positive_int, default=1, help="bootstrap estimators per epoch")
    det.add_argument("--folds", type=_positive_int, default=5)
    det.add_argument("--grid", help="'full' (default), 'compact' or a JSON grid file")
    det.add_argument("--seed", type=int, default=0)
    det.add_argument("--out", default=None, help=f"output directory (default ${OUT_ENV} or ./cartbias-out)")
    det.set_defaults(func=cmd_detect)

    sim = sub.add_parser("simulate", help="run a synthetic study")
    sim.add_argument("study", choices=["fdr", "cvr"])
    sim.add_argument("--kind", choices=sorted(CVR_KINDS), default="fixed-region",
                     help="planted-region design for cvr studies")
    sim.add_argument("--p", type=int, nargs="+", choices=[2, 3, 4, 5], help="feature dimensions")
    sim.add_argument("--n", type=int, nargs="+", help="sample sizes")
    sim.add_argument("--reps", type=_positive_int, help="replications per cell")
    sim.add_argument("--alpha", type=float, default=0.2)
    sim.add_argument("--bag", type=_positive_int, default=None)
    sim.add_argument("--epochs", type=_positive_int, default=1)
    sim.add_argument("--half-width", type=float, default=None,
                     help="half-width of the planted box (default: 10%% of the volume)")
    sim.add_argument("--grid", help="'compact' (default), 'full' or a JSON grid file")
    sim.add_argument("--full", action="store_true", help="published sample sizes, dims and replication counts")
    sim.add_argument("--workers", type=_positive_int, default=1)
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--out", default=None)
    sim.set_defaults(func=cmd_simulate, parser=sim)

    gen = sub.add_parser("generate", help="write a synthetic scored dataset")
    gen.add_argument("design", choices=["no-bias", "planted"])
    gen.add_argument("--n", type=_positive_int, default=2000)
    gen.add_argument("--p", type=int, choices=[2, 3, 4, 5], default=2)
    gen.add_argument("--half-width", type=float, default=None)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out", default=None)
    gen.set_defaults(func=cmd_generate)

    exp = sub.add_parser("export", help="render a saved tree")
    exp.add_argument("--tree", required=True)
    exp.add_argument("--format", choices=["dot", "json"], default="dot")
    exp.add_argument("--output", help="write here instead of stdout")
    exp.set_defaults(func=cmd_export)

    rer = sub.add_parser("rerun", help="repeat a run from its manifest.json")
    rer.add_argument("--manifest", required=True)
    rer.add_argument("--workers", type=_positive_int, default=1)
    rer.add_argument("--out", default=None)
    rer.set_defaults(func=cmd_rerun)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "out", "unset") is None:
        args.out = _default_out()
    if args.command == "simulate":
        if args.bag is None:
            args.bag = 5 if args.study == "fdr" else 1
        if args.n and any(n < 10 for n in args.n):
            parser.error("sample sizes must be >= 10")
        if not 0 < args.alpha < 1:
            parser.error("--alpha must lie in (0, 1)")
    try:
        return args.func(args)
    except (CartBiasError, OSError, json.JSONDecodeError) as exc:
        print(f"cartbias: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
