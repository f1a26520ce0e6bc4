#!/usr/bin/env python3
"""Drive the full pipeline on synthetic data and tabulate AURCs per CSF.

Generates train/validation/test splits from one synthetic spec, fits
centroid probes on the training split, then for every confidence score
function: scores both splits, trains aggregation weights on validation,
evaluates on test and verifies the loss bound.  Everything goes through
the `reside` CLI so the run is reproducible from the printed commands.
"""

import argparse
import json
from pathlib import Path

from reside.cli import main as reside

CSFS = ["msp", "sm", "ml", "lm", "ne", "ngi"]


def run(*args):
    printable = " ".join(str(a) for a in args)
    print(f"$ reside {printable}")
    code = reside([str(a) for a in args])
    if code != 0:
        raise SystemExit(f"command failed with exit code {code}")


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--outdir", type=Path, default=Path("bench_out"))
    parser.add_argument("--spec", default="pathological",
                        choices=["pathological", "separable", "mixture"])
    parser.add_argument("--m", type=int, default=600)
    parser.add_argument("--layers", type=int, default=3)
    parser.add_argument("--subsets", type=int, default=1)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--epochs", type=int, default=100)
    args = parser.parse_args()

    out = args.outdir
    out.mkdir(parents=True, exist_ok=True)
    for split, offset in [("train", 0), ("val", 1), ("test", 2)]:
        run("gen-synthetic", "--spec", args.spec, "--m", args.m, "--l", args.layers,
            "--h", args.subsets, "--seed", args.seed + offset, "--out", out / split)
    run("cluster", "--train", out / "train", "--out", out / "probes.json", "--seed", args.seed)

    rows = []
    for csf in CSFS:
        for split in ("val", "test"):
            run("score", "--data", out / split, "--probes", out / "probes.json",
                "--csf", csf, "--out", out / f"{csf}_{split}.json")
        run("train", "--val-scores", out / f"{csf}_val.json", "--val-data", out / "val",
            "--epochs", args.epochs, "--seed", args.seed, "--out", out / f"{csf}_weights.json")
        run("eval", "--test-scores", out / f"{csf}_test.json", "--test-data", out / "test",
            "--weights", out / f"{csf}_weights.json", "--out-prefix", out / f"{csf}_run")
        run("bound-check", "--scores", out / f"{csf}_val.json", "--data", out / "val",
            "--weights", out / f"{csf}_weights.json", "--out", out / f"{csf}_bound.json")
        rows.append((csf, json.loads((out / f"{csf}_run.metrics.json").read_text())))

    print(f"\n{args.spec} (M={args.m}, L={args.layers}, H={args.subsets}, seed={args.seed})")
    print(f"{'CSF':<6} {'baseline':>10} {'best layer':>11} {'aggregated':>11} {'delta':>8}")
    for csf, metrics in rows:
        print(
            f"{csf:<6} {metrics['aurc_baseline']:>10.4f} {metrics['aurc_best_layer']:>11.4f}"
            f" {metrics['aurc_reside']:>11.4f} {metrics['delta_percent']:>7.2f}%"
        )


if __name__ == "__main__":
    main()
