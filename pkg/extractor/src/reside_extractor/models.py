"""Torchvision model builders with a binary head plus block capture presets."""

from __future__ import annotations

import torch
from torch import nn
from torchvision import models

# per-family "blocks" preset: capture point names and whether the block
# outputs channels-last feature maps (B, H, W, C)
_PRESETS = {
    "resnet18": (
        ["layer1.0", "layer1.1", "layer2.0", "layer2.1", "layer3.0", "layer3.1", "layer4.0", "layer4.1"],
        False,
    ),
    "resnet50": (
        [f"layer{stage}.{i}" for stage, blocks in ((1, 3), (2, 4), (3, 6), (4, 3)) for i in range(blocks)],
        False,
    ),
    "swin_t": (
        [f"features.{stage}.{i}" for stage, blocks in ((1, 2), (3, 2), (5, 6), (7, 2)) for i in range(blocks)],
        True,
    ),
}

MODEL_NAMES = tuple(_PRESETS)


def build_model(name: str, checkpoint: str | None = None) -> nn.Module:
    """Instantiate a torchvision backbone with a 2-class head.

    Weights are random unless a state-dict checkpoint is given (loaded
    after the head swap so binary-head checkpoints fit).
    """
    if name == "resnet18":
        model = models.resnet18(weights=None)
        model.fc = nn.Linear(model.fc.in_features, 2)
    elif name == "resnet50":
        model = models.resnet50(weights=None)
        model.fc = nn.Linear(model.fc.in_features, 2)
    elif name == "swin_t":
        model = models.swin_t(weights=None)
        model.head = nn.Linear(model.head.in_features, 2)
    else:
        raise ValueError(f"unknown model {name!r}; choose from {MODEL_NAMES}")
    if checkpoint:
        state = torch.load(checkpoint, map_location="cpu", weights_only=True)
        model.load_state_dict(state)
    model.eval()
    return model


def resolve_capture_points(model: nn.Module, model_name: str, layers_spec: str) -> tuple[list[str], bool]:
    """Turn a --layers value into module names plus a channels-last hint.

    ``blocks`` selects the per-family preset; anything else is a comma
    list of module names looked up in ``model.named_modules()``.
    """
    if layers_spec == "blocks":
        names, channels_last = _PRESETS[model_name]
    else:
        names = [tok.strip() for tok in layers_spec.split(",") if tok.strip()]
        channels_last = _PRESETS.get(model_name, (None, False))[1]
    if not names:
        raise ValueError(f"layer spec {layers_spec!r} names no modules")
    available = dict(model.named_modules())
    missing = [n for n in names if n not in available]
    if missing:
        raise ValueError(f"capture points not found in model: {missing}")
    return names, channels_last
