"""Command-line pipeline: one subcommand per stage with file handoffs.

    reside gen-synthetic --spec pathological --m 600 --l 3 --h 1 --seed 0 --out data/
    reside cluster --train data/ --out probes.json
    reside score --data data/ --probes probes.json --csf msp --out scores.json
    reside train --val-scores scores.json --val-data data/ --out weights.json
    reside eval --test-scores t.json --test-data test/ --weights weights.json --out-prefix out/run
    reside bound-check --scores scores.json --data data/ --weights weights.json

Exit codes: 0 success, 1 data error, 2 usage error, 3 bound violation.
Every command writes a run manifest alongside its outputs.  The
RESIDE_THREADS environment variable caps BLAS thread pools.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path


class UsageError(ValueError):
    pass


def _cap_threads() -> None:
    cap = os.environ.get("RESIDE_THREADS")
    if not cap:
        return
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
        os.environ.setdefault(var, cap)


def _write_run_manifest(path: Path, command: str, args: argparse.Namespace, outputs: list[str], started: float) -> None:
    from . import __version__

    config = {k: v for k, v in vars(args).items() if k != "func"}
    doc = {
        "command": command,
        "config": config,
        "outputs": outputs,
        "seed": config.get("seed"),
        "toolkit_version": __version__,
        "duration_seconds": time.monotonic() - started,
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True, default=str))


def _load_eval_arrays(data_dir: str):
    from .feature_store import compute_masses, derive_correctness, load_dataset

    dataset = load_dataset(data_dir)
    flags = derive_correctness(dataset)
    masses = compute_masses(dataset)
    return dataset, flags.errors, masses.masses


def cmd_cluster(args) -> int:
    from .clustering import build_probes, save_probes
    from .feature_store import load_dataset

    if args.k_min > args.k_max:
        raise UsageError(f"--k-min {args.k_min} exceeds --k-max {args.k_max}")
    started = time.monotonic()
    dataset = load_dataset(args.train)
    probes = build_probes(dataset, k_min=args.k_min, k_max=args.k_max, seed=args.seed)
    out = save_probes(probes, args.out)
    for layer in probes.layers:
        print(f"layer {layer.layer_index}: K={layer.k} silhouette={layer.silhouette:.4f}")
    _write_run_manifest(Path(str(out) + ".manifest.json"), "cluster", args, [str(out)], started)
    return 0


def cmd_score(args) -> int:
    import numpy as np

    from .csf import (
        CsfKind,
        PNormConfig,
        _score_column,
        build_score_matrix,
        grid_search_p,
        save_score_matrix,
    )
    from .clustering import load_probes

    started = time.monotonic()
    kind = CsfKind(args.csf)
    probes = load_probes(args.probes)

    if args.pnorm_grid:
        grid = [float(tok) for tok in args.pnorm_grid.split(",") if tok.strip()]
        if not grid:
            raise UsageError(f"--pnorm-grid {args.pnorm_grid!r} parsed to an empty grid")
        dataset, errors, masses = _load_eval_arrays(args.data)

        def final_column(k, cfg):
            return _score_column(k, np.asarray(dataset.final_logits, dtype=np.float64), cfg)

        pnorm = grid_search_p(final_column, grid, kind, masses, errors)
        print(f"pnorm selection: enabled={pnorm.enabled} p={pnorm.p}")
    elif args.pnorm_p is not None:
        pnorm = PNormConfig(enabled=True, p=args.pnorm_p)
        from .feature_store import load_dataset

        dataset = load_dataset(args.data)
    else:
        from .feature_store import load_dataset

        dataset = load_dataset(args.data)
        pnorm = PNormConfig()

    matrix = build_score_matrix(dataset, probes, kind, pnorm)
    out = save_score_matrix(matrix, args.out)
    _write_run_manifest(Path(str(out) + ".manifest.json"), "score", args, [str(out)], started)
    return 0


def cmd_train(args) -> int:
    from .aggregate import TrainConfig, optimize_weights
    from .csf import load_score_matrix

    started = time.monotonic()
    matrix = load_score_matrix(args.val_scores)
    dataset, errors, masses = _load_eval_arrays(args.val_data)
    if matrix.sample_count != dataset.sample_count:
        raise ValueError(
            f"score matrix has {matrix.sample_count} rows, dataset has {dataset.sample_count} samples"
        )
    config = TrainConfig(
        learning_rate=args.lr,
        batch_size=args.batch,
        epochs=args.epochs,
        seed=args.seed,
        standardize_scores=args.standardize,
    )
    report = optimize_weights(matrix, masses, errors, config)
    out = report.save(args.out)
    if report.warning:
        print(f"warning: {report.warning}", file=sys.stderr)
    print(
        f"best epoch {report.best_epoch} of {len(report.aurc_curve) - 1 if report.aurc_curve else 0}"
        f" | validation AURC {report.aurc_curve[report.best_epoch] if report.aurc_curve else float('nan'):.6f}"
        f" | fallback={report.fallback} | best layer {report.best_layer}"
    )
    _write_run_manifest(Path(str(out) + ".manifest.json"), "train", args, [str(out)], started)
    return 0


def cmd_eval(args) -> int:
    import numpy as np

    from .aggregate import TrainReport
    from .csf import load_score_matrix
    from .sc_eval import aurc, rc_curve

    started = time.monotonic()
    matrix = load_score_matrix(args.test_scores)
    dataset, errors, masses = _load_eval_arrays(args.test_data)
    if matrix.sample_count != dataset.sample_count:
        raise ValueError(
            f"score matrix has {matrix.sample_count} rows, dataset has {dataset.sample_count} samples"
        )
    report = TrainReport.load(args.weights)
    w = np.asarray(report.weights, dtype=np.float64)
    if w.shape != (matrix.scores.shape[1],):
        raise ValueError(f"weights dim {w.shape} does not match score columns {matrix.scores.shape[1]}")

    aggregated = matrix.scores @ w
    baseline = matrix.scores[:, -1]
    best_col = matrix.scores[:, report.best_layer - 1]

    curve = rc_curve(aggregated, errors, masses)
    aurc_reside = curve.aurc
    aurc_baseline = aurc(baseline, errors, masses)
    aurc_best_layer = aurc(best_col, errors, masses)
    delta = 0.0 if aurc_baseline == 0.0 else (aurc_baseline - aurc_reside) / aurc_baseline * 100.0

    prefix = Path(args.out_prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    rc_path = curve.to_csv(Path(str(prefix) + ".rc.csv"))
    rc_base_path = rc_curve(baseline, errors, masses).to_csv(Path(str(prefix) + ".rc_baseline.csv"))
    metrics = {
        "aurc_reside": aurc_reside,
        "aurc_baseline": aurc_baseline,
        "aurc_best_layer": aurc_best_layer,
        "delta_percent": delta,
        "best_layer": report.best_layer,
        "error_rate": float(np.dot(masses, errors)),
        "csf_kind": matrix.csf_kind.value,
    }
    metrics_path = Path(str(prefix) + ".metrics.json")
    metrics_path.write_text(json.dumps(metrics, indent=2, sort_keys=True))
    print(
        f"AURC reside={aurc_reside:.6f} baseline={aurc_baseline:.6f}"
        f" best-layer={aurc_best_layer:.6f} delta={delta:.2f}%"
    )
    outputs = [str(rc_path), str(rc_base_path), str(metrics_path)]
    _write_run_manifest(Path(str(prefix) + ".manifest.json"), "eval", args, outputs, started)
    return 0


def cmd_bound_check(args) -> int:
    import numpy as np

    from .aggregate import TrainReport
    from .csf import load_score_matrix
    from .sc_eval import BoundViolation, check_aurc_bounds

    started = time.monotonic()
    matrix = load_score_matrix(args.scores)
    dataset, errors, masses = _load_eval_arrays(args.data)
    report = TrainReport.load(args.weights)
    w = np.asarray(report.weights, dtype=np.float64)
    n = int(errors.sum())
    if n == 0 or n == dataset.sample_count:
        print(f"bound check skipped: degenerate split (n={n} of M={dataset.sample_count})")
        if args.out:
            Path(args.out).write_text(json.dumps({"skipped": True, "n": n, "M": dataset.sample_count}))
            _write_run_manifest(Path(args.out + ".manifest.json"), "bound-check", args, [args.out], started)
        return 0
    try:
        bound = check_aurc_bounds(matrix, w, masses, errors)
    except BoundViolation as exc:
        print(f"BOUND VIOLATION: {exc}", file=sys.stderr)
        print(json.dumps(exc.report.to_dict(), indent=2, sort_keys=True), file=sys.stderr)
        return 3
    doc = bound.to_dict()
    if args.out:
        Path(args.out).write_text(json.dumps(doc, indent=2, sort_keys=True))
        _write_run_manifest(Path(args.out + ".manifest.json"), "bound-check", args, [args.out], started)
        print(f"bounds hold: AURC {bound.aurc:.6f} < loose {bound.loose_bound:.6f}")
    else:
        from . import __version__

        doc["run_manifest"] = {
            "command": "bound-check",
            "config": {k: v for k, v in vars(args).items() if k != "func"},
            "toolkit_version": __version__,
            "duration_seconds": time.monotonic() - started,
        }
        print(json.dumps(doc, indent=2, sort_keys=True))
    return 0


def cmd_gen_synthetic(args) -> int:
    from .feature_store import write_dataset
    from .synth import generate

    started = time.monotonic()
    dataset = generate(args.spec, m=args.m, l=args.l, h=args.h, seed=args.seed, k=args.k)
    out = write_dataset(dataset, args.out)
    print(f"wrote {args.spec} dataset: M={dataset.sample_count} L={dataset.layer_count} H={dataset.subset_count}")
    _write_run_manifest(out / "run_manifest.json", "gen-synthetic", args, [str(out)], started)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="reside", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("cluster", help="fit centroid probes on a training dataset")
    p.add_argument("--train", required=True, help="training dataset directory")
    p.add_argument("--out", required=True, help="probe set JSON path")
    p.add_argument("--k-min", type=int, default=2)
    p.add_argument("--k-max", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("score", help="build the layerwise score matrix for one CSF")
    p.add_argument("--data", required=True, help="dataset directory to score")
    p.add_argument("--probes", required=True, help="probe set JSON")
    p.add_argument("--csf", required=True, choices=["msp", "sm", "ml", "lm", "ne", "ngi"])
    group = p.add_mutually_exclusive_group()
    group.add_argument("--pnorm-grid", help="comma list of p values to grid-search on this dataset")
    group.add_argument("--no-pnorm", action="store_true", help="identity transform (default)")
    group.add_argument("--pnorm-p", type=float, help="apply a fixed, previously selected p")
    p.add_argument("--out", required=True, help="score matrix header path (blob written alongside)")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("train", help="optimize aggregation weights on validation scores")
    p.add_argument("--val-scores", required=True)
    p.add_argument("--val-data", required=True)
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--batch", type=int, default=16)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--standardize", action="store_true", help="per-column score standardization")
    p.add_argument("--out", required=True, help="training report JSON path")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="risk-coverage evaluation of trained weights")
    p.add_argument("--test-scores", required=True)
    p.add_argument("--test-data", required=True)
    p.add_argument("--weights", required=True, help="training report JSON")
    p.add_argument("--out-prefix", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bound-check", help="verify the AURC upper bounds at given weights")
    p.add_argument("--scores", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--weights", required=True)
    p.add_argument("--out", help="write the bound report here instead of stdout")
    p.set_defaults(func=cmd_bound_check)

    p = sub.add_parser("gen-synthetic", help="generate a synthetic feature dataset")
    p.add_argument("--spec", required=True, choices=["separable", "pathological", "planted-k", "mixture"])
    p.add_argument("--m", type=int, default=200)
    p.add_argument("--l", type=int, default=2)
    p.add_argument("--h", type=int, default=1)
    p.add_argument("--k", type=int, default=3, help="planted cluster count (planted-k only)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output dataset directory")
    p.set_defaults(func=cmd_gen_synthetic)

    return parser


def main(argv=None) -> int:
    _cap_threads()
    parser = build_parser()
    args = parser.parse_args(argv)
    from .feature_store import DatasetFormatError

    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except (FileNotFoundError, DatasetFormatError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
