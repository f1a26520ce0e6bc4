"""`extract` command: images + classifier in, feature dataset directory out."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="extract", description=__doc__)
    parser.add_argument("--model", required=True, help="resnet18 | resnet50 | swin_t")
    parser.add_argument("--images", required=True, help="folder with two class subfolders")
    parser.add_argument("--layers", default="blocks", help="'blocks' preset or comma list of module names")
    parser.add_argument("--out", required=True, help="output dataset directory")
    parser.add_argument("--subset-map", help="CSV of relative_path,subset_id rows")
    parser.add_argument("--batch", type=int, default=32)
    parser.add_argument("--device", default="cpu")
    parser.add_argument("--checkpoint", help="state-dict path for the binary-head model")
    parser.add_argument("--image-size", type=int, default=224)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    from .extract import ExtractionError, ExtractionSpec, extract
    from .models import build_model, resolve_capture_points

    try:
        model = build_model(args.model, checkpoint=args.checkpoint)
        capture_points, channels_last = resolve_capture_points(model, args.model, args.layers)
        spec = ExtractionSpec(
            model_name=args.model,
            capture_points=capture_points,
            images_dir=Path(args.images),
            out_dir=Path(args.out),
            channels_last=channels_last,
            image_size=args.image_size,
            batch_size=args.batch,
            device=args.device,
            subset_map=Path(args.subset_map) if args.subset_map else None,
        )
        out = extract(model, spec)
    except (ExtractionError, ValueError, FileNotFoundError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    import json

    manifest = json.loads((out / "manifest.json").read_text())
    print(f"wrote dataset: {out} (M={manifest['M']}, L={manifest['L']}, dims={manifest['layer_dims']})")
    return 0


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
