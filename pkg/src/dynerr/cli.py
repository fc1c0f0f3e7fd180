"""Command-line pipelines: generate data, compute indices, evaluate, roll out.

Subcommands
-----------
generate   simulate a system, split 70/15/15, write DYTR files + stats sidecar
indices    per-state d/theta CSV for a query file against a reference file
evaluate   full evaluation report (JSON) plus binned-curve CSVs
rollout    recursive-forecast study: per-horizon reports + summary CSV
report     merge evaluation reports into one comparison CSV

Every command writes a manifest JSON (flags, input digests, version,
timestamp) next to its outputs. Outputs are deterministic for fixed inputs
and flags; only the manifest timestamp differs between reruns. The
``DYNERR_THREADS`` environment variable caps worker threads.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from ._kernels import resolve_threads
from .attractor import DEFAULT_QUANTILE, build_reference
from .core import (
    NormStats,
    SplitSpec,
    compute_norm_stats,
    load_dataset,
    save_dataset,
    split,
    zscore,
)
from .forecast import Forecaster, rollout_study, write_rollout_csv
from .generators import (
    KsParams,
    LorenzParams,
    ROLLOUT_PRESET_STEPS,
    simulate_ks,
    simulate_lorenz,
    time_scale,
)
from .indices import compute_indices, write_indices_csv
from .metrics import EvaluationReport, ForecastPair, build_report, lat_weighted_rmse, write_curve_csv

_SCALAR_REPORT_FIELDS = (
    "mse", "nmse", "mae", "nmae",
    "mse_d", "mse_theta", "nmse_d", "nmse_theta",
    "mae_d", "mae_theta", "nmae_d", "nmae_theta",
    "wd", "wd_d", "wd_theta",
    "mean_d_pred", "mean_theta_pred", "mean_d_true", "mean_theta_true",
    "n_valid", "n_skipped",
)


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with path.open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _write_manifest(path: Path, args: argparse.Namespace, inputs: list[Path]) -> None:
    config = {k: v for k, v in vars(args).items() if k != "func"}
    manifest = {
        "command": " ".join(sys.argv) if sys.argv else "dynerr",
        "config": {k: (str(v) if isinstance(v, Path) else v) for k, v in config.items()},
        "inputs": {str(p): _sha256(Path(p)) for p in inputs},
        "artifact_version": __version__,
        "threads": resolve_threads(),
        "timestamp": datetime.now(timezone.utc).isoformat(),
    }
    path.write_text(json.dumps(manifest, indent=2) + "\n")


def _quantile_flag(value: str) -> float:
    q = float(value)
    if not (0.5 < q < 1.0):
        raise argparse.ArgumentTypeError(f"quantile must lie in (0.5, 1), got {q}")
    return q


def _load_norm(path) -> NormStats:
    data = json.loads(Path(path).read_text())
    return NormStats(mean=float(data["mean"]), std=float(data["std"]))


def _maybe_normalize(dataset, norm_path):
    if norm_path is None:
        return dataset
    return zscore(dataset, _load_norm(norm_path))


def cmd_generate(args: argparse.Namespace) -> int:
    if args.system == "lorenz":
        params = LorenzParams(
            dt=args.dt,
            n_steps=args.steps + args.discard,
            transient_discard=args.discard,
        )
        data = simulate_lorenz(params, seed_or_init=args.seed)
    else:
        params = KsParams(
            n_steps_internal=args.steps * 25 + args.discard,
            transient_discard=args.discard,
        )
        data = simulate_ks(params, seed=args.seed)
    train, val, test = split(data, SplitSpec())
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    paths = {}
    for label, part in (("train", train), ("val", val), ("test", test)):
        path = Path(f"{out}-{label}.dytr")
        save_dataset(part, path, format=args.format)
        paths[label] = path
    stats = compute_norm_stats(train)
    stats_path = Path(f"{out}-stats.json")
    stats_path.write_text(json.dumps({"mean": stats.mean, "std": stats.std}, indent=2) + "\n")
    _write_manifest(Path(f"{out}-manifest.json"), args, [])
    for label, path in paths.items():
        print(f"wrote {label}: {path}")
    print(f"wrote stats: {stats_path}")
    return 0


def cmd_indices(args: argparse.Namespace) -> int:
    reference = _maybe_normalize(load_dataset(args.reference), args.normalize)
    queries = _maybe_normalize(load_dataset(args.queries), args.normalize)
    ref = build_reference(reference, normalized=args.normalize is not None)
    idx = compute_indices(ref, queries, q=args.q)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_indices_csv(idx, out, queries)
    _write_manifest(out.with_suffix(out.suffix + ".manifest.json"), args, [Path(args.reference), Path(args.queries)])
    print(f"wrote indices: {out} ({idx.n_valid}/{len(idx)} valid)")
    return 0


def cmd_evaluate(args: argparse.Namespace) -> int:
    pred = _maybe_normalize(load_dataset(args.pred), args.normalize)
    truth = _maybe_normalize(load_dataset(args.truth), args.normalize)
    reference = _maybe_normalize(load_dataset(args.reference), args.normalize)
    if pred.states.shape != truth.states.shape:
        raise ValueError(
            f"prediction has {pred.n_times} rows x {pred.n_states} cols, "
            f"truth has {truth.n_times} x {truth.n_states}"
        )
    ref = build_reference(reference, normalized=args.normalize is not None)
    pair = ForecastPair(pred=pred, truth=truth, lead_steps=args.lead)
    pred_idx = compute_indices(ref, pred, q=args.q)
    true_idx = compute_indices(ref, truth, q=args.q)
    report = build_report(pair, pred_idx, true_idx, n_bins=args.bins)
    payload = report.to_dict()
    if args.lat_grid is not None:
        lats = np.loadtxt(args.lat_grid, ndmin=1)
        if pred.n_states % lats.size != 0:
            raise ValueError(f"{pred.n_states} state columns do not factor over {lats.size} latitudes")
        n_lon = pred.n_states // lats.size
        shape = (pred.n_times, lats.size, n_lon)
        payload["lat_weighted_rmse"] = lat_weighted_rmse(
            pred.states.reshape(shape), truth.states.reshape(shape), lats
        )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(payload, indent=2) + "\n")
    for key, curve in report.curves.items():
        write_curve_csv(curve, out.with_name(out.stem + f"-curve-{key}.csv"))
    inputs = [Path(args.pred), Path(args.truth), Path(args.reference)]
    _write_manifest(out.with_suffix(out.suffix + ".manifest.json"), args, inputs)
    print(f"wrote report: {out} (mse={report.mse:.6g}, wd={report.wd:.6g})")
    return 0


def cmd_rollout(args: argparse.Namespace) -> int:
    reference = _maybe_normalize(load_dataset(args.reference), args.normalize)
    test = _maybe_normalize(load_dataset(args.test), args.normalize)
    ref = build_reference(reference, normalized=args.normalize is not None)
    if args.model == "analog":
        forecaster = Forecaster.analog(ref, k=args.k)
    else:
        forecaster = Forecaster.persistence()
    steps = args.steps if args.steps is not None else ROLLOUT_PRESET_STEPS.get(args.system or "", 0)
    if steps < 1:
        raise ValueError("--steps is required unless --system provides a preset horizon")
    scale = time_scale(args.system, test.dt) if args.system else None
    eval_values = [float(v) for v in args.eval.split(",") if v.strip()]
    if args.units == "lt":
        if scale is None:
            raise ValueError("--units lt requires --system to resolve the time scale")
        eval_steps = [max(1, int(round(v * scale.lt_steps))) for v in eval_values]
    else:
        eval_steps = [int(v) for v in eval_values]
    entries = rollout_study(
        forecaster,
        test,
        m=args.m,
        steps=steps,
        n_starts=args.starts,
        eval_times=np.array(eval_steps, dtype=np.int64),
        ref=ref,
        q=args.q,
        time_scale=scale,
    )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_rollout_csv(entries, Path(f"{out}-study.csv"))
    written = [Path(f"{out}-study.csv")]
    for entry in entries:
        if entry.report is not None:
            path = Path(f"{out}-step{entry.step}.json")
            entry.report.to_json(path)
            written.append(path)
    _write_manifest(Path(f"{out}-manifest.json"), args, [Path(args.reference), Path(args.test)])
    for path in written:
        print(f"wrote {path}")
    return 0


def cmd_report(args: argparse.Namespace) -> int:
    rows = []
    for path in args.reports:
        report = EvaluationReport.from_json(Path(path))
        row = {"label": Path(path).stem}
        for name in _SCALAR_REPORT_FIELDS:
            row[name] = getattr(report, name)
        rows.append(row)
    lines = ["label," + ",".join(_SCALAR_REPORT_FIELDS)]
    for row in rows:
        cells = [row["label"]] + [
            f"{row[name]:.17g}" if isinstance(row[name], float) else str(row[name])
            for name in _SCALAR_REPORT_FIELDS
        ]
        lines.append(",".join(cells))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text("\n".join(lines) + "\n")
    _write_manifest(out.with_suffix(out.suffix + ".manifest.json"), args, [Path(p) for p in args.reports])
    print(f"wrote comparison: {out} ({len(rows)} reports)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dynerr",
        description="Dynamical-consistency diagnostics for forecasts",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p_gen = sub.add_parser("generate", help="simulate a system and write train/val/test files")
    p_gen.add_argument("system", choices=("lorenz", "ks"))
    p_gen.add_argument("--steps", type=int, default=None, help="output rows after transient discard (and downsampling for ks)")
    p_gen.add_argument("--dt", type=float, default=0.01, help="integration step (lorenz only)")
    p_gen.add_argument("--discard", type=int, default=None, help="transient steps to drop (lorenz rows / ks internal steps)")
    p_gen.add_argument("--seed", type=int, default=42)
    p_gen.add_argument("--format", choices=("binary", "csv"), default="binary")
    p_gen.add_argument("--out", required=True, help="output path prefix")
    p_gen.set_defaults(func=cmd_generate)

    p_idx = sub.add_parser("indices", help="compute d/theta for query states against a reference")
    p_idx.add_argument("--reference", required=True)
    p_idx.add_argument("--queries", required=True)
    p_idx.add_argument("--q", type=_quantile_flag, default=DEFAULT_QUANTILE)
    p_idx.add_argument("--normalize", default=None, help="stats JSON; z-score both inputs before computing")
    p_idx.add_argument("--out", required=True, help="output CSV path")
    p_idx.set_defaults(func=cmd_indices)

    p_eval = sub.add_parser("evaluate", help="full report for a prediction/truth pair")
    p_eval.add_argument("--pred", required=True)
    p_eval.add_argument("--truth", required=True)
    p_eval.add_argument("--reference", required=True)
    p_eval.add_argument("--q", type=_quantile_flag, default=DEFAULT_QUANTILE)
    p_eval.add_argument("--bins", type=int, default=10)
    p_eval.add_argument("--lead", type=int, default=1, help="lead steps recorded in the report")
    p_eval.add_argument("--normalize", default=None, help="stats JSON; z-score all inputs before evaluating")
    p_eval.add_argument("--lat-grid", default=None, help="text file of latitudes (degrees) for weighted RMSE")
    p_eval.add_argument("--out", required=True, help="output report JSON path")
    p_eval.set_defaults(func=cmd_evaluate)

    p_roll = sub.add_parser("rollout", help="recursive-forecast ensemble study")
    p_roll.add_argument("--model", choices=("persistence", "analog"), default="analog")
    p_roll.add_argument("--k", type=int, default=3, help="analog neighbor count")
    p_roll.add_argument("--m", type=int, default=3, help="input window length")
    p_roll.add_argument("--reference", required=True)
    p_roll.add_argument("--test", required=True)
    p_roll.add_argument("--steps", type=int, default=None, help="rollout horizon (defaults to the system preset)")
    p_roll.add_argument("--starts", type=int, default=100)
    p_roll.add_argument("--eval", required=True, help="comma-separated evaluation times")
    p_roll.add_argument("--units", choices=("steps", "lt"), default="steps")
    p_roll.add_argument("--system", choices=("lorenz", "ks"), default=None)
    p_roll.add_argument("--q", type=_quantile_flag, default=DEFAULT_QUANTILE)
    p_roll.add_argument("--normalize", default=None, help="stats JSON; z-score both inputs")
    p_roll.add_argument("--out", required=True, help="output path prefix")
    p_roll.set_defaults(func=cmd_rollout)

    p_rep = sub.add_parser("report", help="merge evaluation reports into a comparison CSV")
    p_rep.add_argument("reports", nargs="+")
    p_rep.add_argument("--out", required=True)
    p_rep.set_defaults(func=cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.subcommand == "generate":
        if args.steps is None:
            args.steps = 1_000_000 if args.system == "lorenz" else 99_600
        if args.discard is None:
            args.discard = 1_000 if args.system == "lorenz" else 10_000
    try:
        return args.func(args)
    except (ValueError, OSError, RuntimeError) as exc:
        print(f"dynerr: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
