"""Run a binary classifier over an image folder and write the feature
dataset directory the reside toolkit loads.

Capture points are forward hooks on named modules; their outputs are
global-average-pooled over spatial (or token) dimensions to one vector per
sample.  Images are processed in sorted path order so sample indexing is
reproducible.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from PIL import Image
from torchvision import transforms

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".webp"}
IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)


class ExtractionError(RuntimeError):
    pass


@dataclass
class ExtractionSpec:
    model_name: str
    capture_points: list[str]
    images_dir: Path
    out_dir: Path
    channels_last: bool = False
    image_size: int = 224
    batch_size: int = 32
    device: str = "cpu"
    subset_map: Path | None = None
    metadata: dict = field(default_factory=dict)


def _pool(output: torch.Tensor, channels_last: bool) -> torch.Tensor:
    if output.ndim == 4:
        return output.mean(dim=(1, 2)) if channels_last else output.mean(dim=(2, 3))
    if output.ndim == 3:  # token sequences (B, N, C)
        return output.mean(dim=1)
    if output.ndim == 2:
        return output
    raise ExtractionError(f"cannot pool a {output.ndim}-d capture output")


def discover_images(images_dir: Path) -> tuple[list[Path], list[int], dict[str, int]]:
    """Sorted image paths, labels from the two class subfolders, mapping."""
    classes = sorted(p.name for p in images_dir.iterdir() if p.is_dir())
    if len(classes) != 2:
        raise ExtractionError(f"expected exactly 2 class subfolders under {images_dir}, found {classes}")
    if set(classes) == {"0", "1"}:
        mapping = {"0": 0, "1": 1}
    elif set(classes) == {"fake", "real"}:
        mapping = {"real": 0, "fake": 1}
    else:
        mapping = {classes[0]: 0, classes[1]: 1}
    paths, labels = [], []
    for cls in classes:
        for path in sorted((images_dir / cls).rglob("*")):
            if path.suffix.lower() in IMAGE_SUFFIXES:
                paths.append(path)
                labels.append(mapping[cls])
    order = np.argsort([str(p) for p in paths], kind="stable")
    paths = [paths[i] for i in order]
    labels = [labels[i] for i in order]
    if not paths:
        raise ExtractionError(f"no images found under {images_dir}")
    return paths, labels, mapping


def _subset_ids(paths: list[Path], images_dir: Path, subset_map: Path | None) -> np.ndarray:
    raw = np.ones(len(paths), dtype=np.int64)
    if subset_map is not None:
        table = {}
        with open(subset_map, newline="") as handle:
            for row in csv.reader(handle):
                if len(row) >= 2 and row[0].strip():
                    table[row[0].strip()] = int(row[1])
        for i, path in enumerate(paths):
            key = path.relative_to(images_dir).as_posix()
            if key in table:
                raw[i] = table[key]
    # densify to 1..H so no declared subset is empty
    uniq = np.unique(raw)
    remap = {int(v): i + 1 for i, v in enumerate(uniq)}
    return np.array([remap[int(v)] for v in raw], dtype=np.int64)


def extract(model: torch.nn.Module, spec: ExtractionSpec) -> Path:
    """Capture pooled features and final logits; write the dataset directory."""
    paths, labels, mapping = discover_images(spec.images_dir)
    subset_ids = _subset_ids(paths, spec.images_dir, spec.subset_map)

    device = torch.device(spec.device)
    model = model.to(device).eval()
    available = dict(model.named_modules())
    captured: dict[str, list[torch.Tensor]] = {name: [] for name in spec.capture_points}

    hooks = []
    try:
        for name in spec.capture_points:
            def make_hook(key):
                def hook(_module, _inputs, output):
                    captured[key].append(_pool(output.detach(), spec.channels_last).cpu())
                return hook
            hooks.append(available[name].register_forward_hook(make_hook(name)))

        preprocess = transforms.Compose([
            transforms.Resize(spec.image_size),
            transforms.CenterCrop(spec.image_size),
            transforms.ToTensor(),
            transforms.Normalize(IMAGENET_MEAN, IMAGENET_STD),
        ])
        logits_batches = []
        with torch.no_grad():
            for start in range(0, len(paths), spec.batch_size):
                chunk = paths[start : start + spec.batch_size]
                batch = torch.stack([preprocess(Image.open(p).convert("RGB")) for p in chunk]).to(device)
                logits_batches.append(model(batch).cpu())
    finally:
        for hook in hooks:
            hook.remove()

    logits = torch.cat(logits_batches).numpy().astype("<f4")
    if logits.ndim != 2 or logits.shape[1] != 2:
        raise ExtractionError(f"non-binary classifier head: logits shape {logits.shape}")
    features = [torch.cat(captured[name]).numpy().astype("<f4") for name in spec.capture_points]
    for name, mat in zip(spec.capture_points, features):
        if mat.shape[0] != len(paths) or mat.ndim != 2:
            raise ExtractionError(f"capture point {name}: unexpected feature shape {mat.shape}")
        if not np.isfinite(mat).all():
            raise ExtractionError(f"capture point {name}: non-finite feature value")
    if not np.isfinite(logits).all():
        raise ExtractionError("non-finite final logit")

    out = spec.out_dir
    out.mkdir(parents=True, exist_ok=True)
    layer_files = [f"layer_{i}.bin" for i in range(1, len(features) + 1)]
    manifest = {
        "format_version": 1,
        "M": len(paths),
        "L": len(features),
        "H": int(subset_ids.max()),
        "layer_dims": [int(mat.shape[1]) for mat in features],
        "files": {
            "labels": "labels.bin",
            "final_logits": "final_logits.bin",
            "subset_ids": "subset_ids.bin",
            "layers": layer_files,
        },
        "metadata": {
            "model": spec.model_name,
            "capture_points": spec.capture_points,
            "image_size": spec.image_size,
            "resize_policy": f"Resize({spec.image_size}) + CenterCrop({spec.image_size}), ImageNet normalization",
            "label_mapping": mapping,
            "image_count": len(paths),
            **spec.metadata,
        },
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    (out / "labels.bin").write_bytes(np.asarray(labels, dtype="u1").tobytes())
    (out / "subset_ids.bin").write_bytes(subset_ids.astype("<u2").tobytes())
    (out / "final_logits.bin").write_bytes(np.ascontiguousarray(logits).tobytes())
    for name, mat in zip(layer_files, features):
        (out / name).write_bytes(np.ascontiguousarray(mat).tobytes())
    return out
