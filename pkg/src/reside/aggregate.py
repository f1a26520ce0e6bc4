"""Learning the layer-aggregation weights with a pairwise preference loss.

The aggregated confidence of a sample with score row s is g_w = w . s.
Weights are trained on a validation split by minimizing, with Adam over
mini-batches, the mean over (correct, wrong) pairs of
ln(1 + exp(g_w(u-) - g_w(u+))).  Training starts from the one-hot vector of
the lowest-validation-AURC column and returns the checkpoint with the
lowest validation AURC, epoch 0 included, so the result never ranks worse
on validation than the best single layer.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import sc_eval

_STD_FLOOR = 1e-12


@dataclass
class TrainConfig:
    learning_rate: float = 0.1
    batch_size: int = 16
    epochs: int = 100
    seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    standardize_scores: bool = False

    def to_dict(self) -> dict:
        return {
            "learning_rate": self.learning_rate,
            "batch_size": self.batch_size,
            "epochs": self.epochs,
            "seed": self.seed,
            "adam_beta1": self.adam_beta1,
            "adam_beta2": self.adam_beta2,
            "adam_eps": self.adam_eps,
            "standardize_scores": self.standardize_scores,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "TrainConfig":
        return cls(**{k: doc[k] for k in cls().to_dict() if k in doc})


@dataclass
class TrainReport:
    """Loss/AURC trajectories plus the returned weight vector.

    ``loss_curve[e]`` and ``aurc_curve[e]`` are the full-validation pairwise
    loss and mass-weighted AURC after epoch e (index 0 = initialization).
    ``fallback`` is set when the returned weights are the initialization.
    """

    loss_curve: list[float]
    aurc_curve: list[float]
    best_epoch: int
    weights: np.ndarray
    fallback: bool
    best_layer: int
    config: TrainConfig
    warning: str | None = None

    def to_dict(self) -> dict:
        return {
            "loss_curve": self.loss_curve,
            "aurc_curve": self.aurc_curve,
            "best_epoch": self.best_epoch,
            "weights": np.asarray(self.weights, dtype=np.float64).tolist(),
            "fallback": self.fallback,
            "best_layer": self.best_layer,
            "config": self.config.to_dict(),
            "warning": self.warning,
        }

    def save(self, path: str | Path) -> Path:
        out = Path(path)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True))
        return out

    @classmethod
    def load(cls, path: str | Path) -> "TrainReport":
        doc = json.loads(Path(path).read_text())
        return cls(
            loss_curve=[float(x) for x in doc["loss_curve"]],
            aurc_curve=[float(x) for x in doc["aurc_curve"]],
            best_epoch=int(doc["best_epoch"]),
            weights=np.asarray(doc["weights"], dtype=np.float64),
            fallback=bool(doc["fallback"]),
            best_layer=int(doc["best_layer"]),
            config=TrainConfig.from_dict(doc.get("config", {})),
            warning=doc.get("warning"),
        )


def _as_matrix(score_matrix) -> np.ndarray:
    s = np.asarray(getattr(score_matrix, "scores", score_matrix), dtype=np.float64)
    if s.ndim != 2:
        raise ValueError(f"score matrix must be 2-d, got shape {s.shape}")
    return s


def _check_pair(w, pos, neg):
    w = np.asarray(w, dtype=np.float64)
    pos = np.asarray(pos, dtype=np.float64)
    neg = np.asarray(neg, dtype=np.float64)
    if pos.size == 0 or neg.size == 0:
        raise sc_eval.DegenerateSplitError("both score sets must be non-empty")
    if pos.ndim != 2 or neg.ndim != 2 or pos.shape[1] != w.shape[0] or neg.shape[1] != w.shape[0]:
        raise ValueError(f"shape mismatch: w {w.shape}, U+ {pos.shape}, U- {neg.shape}")
    return w, pos, neg


def reside_loss(w, scores_pos, scores_neg) -> float:
    """Mean over all (u+, u-) pairs of ln(1 + exp(g_w(u-) - g_w(u+)))."""
    w, pos, neg = _check_pair(w, scores_pos, scores_neg)
    q = neg @ w - (pos @ w)[:, None]
    return float(np.logaddexp(0.0, q).mean())


def _sigmoid(q: np.ndarray) -> np.ndarray:
    out = np.empty_like(q)
    nonneg = q >= 0
    out[nonneg] = 1.0 / (1.0 + np.exp(-q[nonneg]))
    eq = np.exp(q[~nonneg])
    out[~nonneg] = eq / (1.0 + eq)
    return out


def reside_grad(w, scores_pos, scores_neg) -> np.ndarray:
    """Gradient of :func:`reside_loss` in w.

    Per pair the gradient is sigmoid(g(u-) - g(u+)) * (s(u-) - s(u+));
    returned as the mean over all pairs.
    """
    w, pos, neg = _check_pair(w, scores_pos, scores_neg)
    q = neg @ w - (pos @ w)[:, None]  # |U+| x |U-|
    sig = _sigmoid(q)
    total = sig.sum(axis=0) @ neg - sig.sum(axis=1) @ pos
    return total / q.size


def aggregate_score(w, score_row) -> float:
    """Dot product of the weights with one score row."""
    w = np.asarray(w, dtype=np.float64)
    row = np.asarray(score_row, dtype=np.float64)
    if row.shape != w.shape:
        raise ValueError(f"weights {w.shape} do not match score row {row.shape}")
    return float(w @ row)


def best_layer(score_matrix, masses, errors) -> int:
    """1-based index of the column with the lowest validation AURC.

    Ties go to the larger index so an uninformative matrix falls back to
    the final-logit column; with no errors the final column is returned by
    convention.
    """
    s = _as_matrix(score_matrix)
    e = np.asarray(errors)
    if int(e.sum()) == 0:
        return s.shape[1]
    best, best_aurc = 0, np.inf
    for j in range(s.shape[1]):
        value = sc_eval.aurc(s[:, j], e, masses)
        if value <= best_aurc:
            best, best_aurc = j, value
    return best + 1


def _one_hot(index: int, size: int) -> np.ndarray:
    w = np.zeros(size)
    w[index] = 1.0
    return w


def optimize_weights(score_matrix, masses, errors, config: TrainConfig | None = None) -> TrainReport:
    """Adam over mini-batches of (correct, wrong) pairs, AURC-checkpointed.

    Each epoch shuffles the wrong samples and walks them in chunks of
    ``batch_size``; every chunk is paired with an equal-size seeded draw
    from the correct samples (with replacement only when there are fewer
    correct samples than ``batch_size``) and one Adam step is taken on the
    chunk's pairwise loss.  Degenerate validation (no errors, or nothing
    but errors) skips optimization and returns the final-column one-hot.
    """
    config = config or TrainConfig()
    s = _as_matrix(score_matrix)
    e = np.asarray(errors)
    m_arr = np.asarray(masses, dtype=np.float64)
    m_total, width = s.shape
    n = int(e.sum())

    if n == 0 or n == m_total:
        message = f"degenerate validation split (n={n} of M={m_total}); returning final-column weights"
        warnings.warn(message)
        return TrainReport(
            loss_curve=[],
            aurc_curve=[],
            best_epoch=0,
            weights=_one_hot(width - 1, width),
            fallback=True,
            best_layer=width,
            config=config,
            warning=message,
        )

    plus_idx = np.flatnonzero(e == 0)
    minus_idx = np.flatnonzero(e == 1)
    l_star = best_layer(s, m_arr, e)

    if config.standardize_scores:
        mu = s.mean(axis=0)
        sd = s.std(axis=0)
        sd = np.where(sd < _STD_FLOOR, 1.0, sd)
        s_opt = (s - mu) / sd
    else:
        sd = np.ones(width)
        s_opt = s

    w = _one_hot(l_star - 1, width)
    rng = np.random.default_rng(config.seed)
    moment1 = np.zeros(width)
    moment2 = np.zeros(width)
    step = 0
    replace = plus_idx.size < config.batch_size

    def epoch_stats(weights):
        loss = reside_loss(weights, s_opt[plus_idx], s_opt[minus_idx])
        return loss, sc_eval.aurc(s_opt @ weights, e, m_arr)

    loss0, aurc0 = epoch_stats(w)
    loss_curve, aurc_curve = [loss0], [aurc0]
    best_w, best_aurc, best_epoch = w.copy(), aurc0, 0

    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(minus_idx)
        for start in range(0, order.size, config.batch_size):
            chunk = order[start : start + config.batch_size]
            draw = rng.choice(plus_idx, size=chunk.size, replace=replace)
            grad = reside_grad(w, s_opt[draw], s_opt[chunk])
            step += 1
            moment1 = config.adam_beta1 * moment1 + (1.0 - config.adam_beta1) * grad
            moment2 = config.adam_beta2 * moment2 + (1.0 - config.adam_beta2) * grad**2
            m_hat = moment1 / (1.0 - config.adam_beta1**step)
            v_hat = moment2 / (1.0 - config.adam_beta2**step)
            w = w - config.learning_rate * m_hat / (np.sqrt(v_hat) + config.adam_eps)
        loss_e, aurc_e = epoch_stats(w)
        loss_curve.append(loss_e)
        aurc_curve.append(aurc_e)
        if aurc_e < best_aurc:
            best_w, best_aurc, best_epoch = w.copy(), aurc_e, epoch

    return TrainReport(
        loss_curve=loss_curve,
        aurc_curve=aurc_curve,
        best_epoch=best_epoch,
        weights=best_w / sd,  # undo per-column standardization; ranking unchanged
        fallback=best_epoch == 0,
        best_layer=l_star,
        config=config,
    )
