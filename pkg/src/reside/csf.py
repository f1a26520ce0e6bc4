"""Logit-based confidence scores and the layerwise score matrix.

Six closed-form scores of a logit vector z with predicted class
y = argmax z (ties to the lower index), sigma = softmax:

    MSP = sigma_y(z)                 SM  = sigma_y(z) - max_{c!=y} sigma_c(z)
    ML  = z_y                        LM  = z_y - max_{c!=y} z_c
    NE  = sum_c sigma_c ln sigma_c   NGI = -1 + sum_c sigma_c^2

An M x (L+1) score matrix holds one column per hidden-layer probe plus a
final column scored from the detector's own logits.  The optional pNorm
transform centers each logit vector and divides by its l_p norm before
scoring; p is grid-searched against validation AURC of the final column.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from . import sc_eval
from .clustering import ProbeSet, layer_logits
from .feature_store import FeatureDataset

PNORM_GRID_DEFAULT = (1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0)


class CsfKind(str, Enum):
    MSP = "msp"
    SM = "sm"
    ML = "ml"
    LM = "lm"
    NE = "ne"
    NGI = "ngi"


def _softmax_rows(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def csf_scores(kind: CsfKind, logits: np.ndarray) -> np.ndarray:
    """Row-wise confidence scores for an M x K logit matrix, K >= 2."""
    z = np.asarray(logits, dtype=np.float64)
    if z.ndim != 2:
        raise ValueError(f"logits must be 2-d, got shape {z.shape}")
    if z.shape[1] < 2:
        raise ValueError(f"need at least 2 logits per row, got {z.shape[1]}")
    if not np.isfinite(z).all():
        raise ValueError("non-finite logit")
    kind = CsfKind(kind)
    rows = np.arange(z.shape[0])
    yhat = np.argmax(z, axis=1)
    if kind is CsfKind.ML:
        return z[rows, yhat]
    if kind is CsfKind.LM:
        masked = z.copy()
        masked[rows, yhat] = -np.inf
        return z[rows, yhat] - masked.max(axis=1)
    p = _softmax_rows(z)
    if kind is CsfKind.MSP:
        return p[rows, yhat]
    if kind is CsfKind.SM:
        masked = p.copy()
        masked[rows, yhat] = -np.inf
        return p[rows, yhat] - masked.max(axis=1)
    if kind is CsfKind.NE:
        terms = np.zeros_like(p)
        nz = p > 0.0
        terms[nz] = p[nz] * np.log(p[nz])
        return terms.sum(axis=1)
    return -1.0 + (p**2).sum(axis=1)  # NGI


def csf_score(kind: CsfKind, z: np.ndarray) -> float:
    """Confidence score of a single logit vector."""
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 1:
        raise ValueError(f"expected a logit vector, got shape {z.shape}")
    return float(csf_scores(kind, z[None, :])[0])


@dataclass(frozen=True)
class PNormConfig:
    """Center-then-l_p-normalize transform; disabled means identity."""

    enabled: bool = False
    p: float | None = None

    def __post_init__(self):
        if self.enabled and (self.p is None or self.p <= 0):
            raise ValueError(f"enabled pNorm needs p > 0, got {self.p}")

    def to_dict(self) -> dict:
        return {"enabled": self.enabled, "p": self.p}

    @classmethod
    def from_dict(cls, doc: dict) -> "PNormConfig":
        return cls(enabled=bool(doc.get("enabled", False)), p=doc.get("p"))


def pnorm_rows(logits: np.ndarray, p: float) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise pNorm; constant rows pass through unchanged and are flagged."""
    if p <= 0:
        raise ValueError(f"p must be positive, got {p}")
    z = np.asarray(logits, dtype=np.float64)
    flagged = z.max(axis=1) == z.min(axis=1)
    centered = z - z.mean(axis=1, keepdims=True)
    norms = (np.abs(centered) ** p).sum(axis=1, keepdims=True) ** (1.0 / p)
    out = np.where(flagged[:, None], z, centered / np.where(norms == 0.0, 1.0, norms))
    return out, flagged


def pnorm_transform(z: np.ndarray, p: float) -> tuple[np.ndarray, bool]:
    z = np.asarray(z, dtype=np.float64)
    out, flagged = pnorm_rows(z[None, :], p)
    return out[0], bool(flagged[0])


def grid_search_p(
    val_scores_builder: Callable[[CsfKind, PNormConfig], np.ndarray],
    grid: Iterable[float],
    csf_kind: CsfKind,
    masses: np.ndarray,
    errors: np.ndarray,
) -> PNormConfig:
    """Pick the transform minimizing validation AURC of the final-layer CSF.

    Candidates are the identity plus every p in the grid; ties prefer the
    identity, then the smaller p.
    """
    grid = sorted(float(p) for p in grid)
    if not grid:
        raise ValueError("empty pNorm grid")
    candidates = [PNormConfig()] + [PNormConfig(enabled=True, p=p) for p in grid]
    best_cfg, best_aurc = None, np.inf
    for cfg in candidates:
        scores = np.asarray(val_scores_builder(csf_kind, cfg), dtype=np.float64)
        value = sc_eval.aurc(scores, errors, masses)
        if value < best_aurc:
            best_cfg, best_aurc = cfg, value
    return best_cfg


@dataclass
class ScoreMatrix:
    """M x (L+1) layerwise confidence scores for one underlying CSF."""

    scores: np.ndarray
    csf_kind: CsfKind
    pnorm: PNormConfig
    provenance: str = ""

    @property
    def sample_count(self) -> int:
        return self.scores.shape[0]

    @property
    def layer_count(self) -> int:
        return self.scores.shape[1] - 1


def _score_column(kind: CsfKind, logits: np.ndarray, pnorm: PNormConfig) -> np.ndarray:
    if not pnorm.enabled:
        return csf_scores(kind, logits)
    transformed, _ = pnorm_rows(logits, pnorm.p)  # flagged rows pass through raw
    return csf_scores(kind, transformed)


def build_score_matrix(
    dataset: FeatureDataset,
    probes: ProbeSet,
    kind: CsfKind,
    pnorm: PNormConfig = PNormConfig(),
) -> ScoreMatrix:
    """Score every sample at every probe layer and at the final logits."""
    probes.validate_against(dataset)
    kind = CsfKind(kind)
    columns = []
    for probe, mat in zip(probes.layers, dataset.features):
        columns.append(_score_column(kind, layer_logits(probe, mat), pnorm))
    columns.append(_score_column(kind, np.asarray(dataset.final_logits, dtype=np.float64), pnorm))
    return ScoreMatrix(
        scores=np.column_stack(columns),
        csf_kind=kind,
        pnorm=pnorm,
        provenance=probes.dataset_hash,
    )


def save_score_matrix(matrix: ScoreMatrix, path: str | Path) -> Path:
    """Write the header JSON at ``path`` and the float64 blob alongside."""
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    blob_name = out.name + ".bin" if out.suffix != ".json" else out.stem + ".bin"
    header = {
        "format_version": 1,
        "M": matrix.sample_count,
        "L": matrix.layer_count,
        "csf_kind": matrix.csf_kind.value,
        "pnorm": matrix.pnorm.to_dict(),
        "provenance": matrix.provenance,
        "blob": blob_name,
    }
    (out.parent / blob_name).write_bytes(np.ascontiguousarray(matrix.scores, dtype="<f8").tobytes())
    out.write_text(json.dumps(header, indent=2, sort_keys=True))
    return out


def load_score_matrix(path: str | Path) -> ScoreMatrix:
    header_path = Path(path)
    header = json.loads(header_path.read_text())
    m, l = int(header["M"]), int(header["L"])
    blob = (header_path.parent / header["blob"]).read_bytes()
    expected = m * (l + 1) * 8
    if len(blob) != expected:
        raise ValueError(f"score blob: expected {expected} bytes, got {len(blob)}")
    scores = np.frombuffer(blob, dtype="<f8").reshape(m, l + 1).copy()
    return ScoreMatrix(
        scores=scores,
        csf_kind=CsfKind(header["csf_kind"]),
        pnorm=PNormConfig.from_dict(header["pnorm"]),
        provenance=header.get("provenance", ""),
    )
