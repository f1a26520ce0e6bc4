"""Risk-coverage evaluation and the pairwise-loss bound check.

Coverage and selective risk are mass-weighted so that H test subsets of
unequal size contribute equally (each sample in subset m carries mass
1/(H*N_m)).  The RC curve sorts samples by confidence descending and takes
cumulative sums of masses and weighted errors; its area is the
mass-weighted sum of prefix risks.  ``check_aurc_bounds`` evaluates the
pairwise-loss upper bounds on the unweighted AURC and raises if either
applicable inequality fails.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

_MASS_TOL = 1e-6


class ZeroCoverageError(ValueError):
    """Selective risk requested at a threshold that accepts no samples."""


class DegenerateSplitError(ValueError):
    """An operation needs both correct and wrong samples (0 < n < M)."""


class BoundViolation(RuntimeError):
    """An AURC upper bound failed; carries the offending report."""

    def __init__(self, message: str, report: "BoundReport"):
        super().__init__(message)
        self.report = report


def _checked(scores, errors, masses):
    s = np.asarray(scores, dtype=np.float64)
    e = np.asarray(errors, dtype=np.float64)
    m = np.asarray(masses, dtype=np.float64)
    if not (s.shape == e.shape == m.shape) or s.ndim != 1:
        raise ValueError(f"scores/errors/masses shapes differ: {s.shape}, {e.shape}, {m.shape}")
    if (m <= 0).any():
        raise ValueError("masses must be positive")
    if abs(m.sum() - 1.0) > _MASS_TOL:
        raise ValueError(f"masses sum to {m.sum()!r}, expected 1")
    return s, e, m


def coverage(scores, masses, t: float) -> float:
    """Total mass of samples with confidence >= t."""
    s = np.asarray(scores, dtype=np.float64)
    m = np.asarray(masses, dtype=np.float64)
    return float(m[s >= t].sum())


def selective_risk(scores, errors, masses, t: float) -> float:
    """Mass-weighted error rate among samples with confidence >= t."""
    s, e, m = _checked(scores, errors, masses)
    accepted = s >= t
    cov = float(m[accepted].sum())
    if cov <= 0.0:
        raise ZeroCoverageError(f"no samples accepted at threshold {t}")
    return float((e[accepted] * m[accepted]).sum() / cov)


@dataclass
class RCCurve:
    """Risk-coverage points ordered by decreasing confidence threshold.

    Point i covers the i+1 highest-confidence samples; ``threshold`` is the
    confidence of the last accepted sample and ``mass`` its weight.  AURC is
    sum(risk * mass).
    """

    coverage: np.ndarray
    risk: np.ndarray
    threshold: np.ndarray
    mass: np.ndarray
    aurc: float

    def __len__(self) -> int:
        return self.coverage.shape[0]

    def to_csv(self, path: str | Path) -> Path:
        out = Path(path)
        out.parent.mkdir(parents=True, exist_ok=True)
        lines = ["coverage,risk,threshold,mass"]
        for c, r, t, m in zip(self.coverage, self.risk, self.threshold, self.mass):
            lines.append(f"{float(c)!r},{float(r)!r},{float(t)!r},{float(m)!r}")
        out.write_text("\n".join(lines) + "\n")
        return out


def rc_curve(scores, errors, masses) -> RCCurve:
    """Cumulative-sum RC curve; ties broken stably by original index."""
    s, e, m = _checked(scores, errors, masses)
    order = np.argsort(-s, kind="stable")
    s, e, m = s[order], e[order], m[order]
    cov = np.cumsum(m)
    risk = np.cumsum(e * m) / cov
    return RCCurve(coverage=cov, risk=risk, threshold=s, mass=m, aurc=float((risk * m).sum()))


def aurc(scores, errors, masses) -> float:
    return rc_curve(scores, errors, masses).aurc


def _split(scores, errors):
    s = np.asarray(scores, dtype=np.float64)
    e = np.asarray(errors)
    return s[e == 0], s[e == 1]


def ranking_error(scores, errors) -> float:
    """Fraction of (correct, wrong) pairs ordered wrongly or tied."""
    pos, neg = _split(scores, errors)
    if pos.size == 0 or neg.size == 0:
        raise DegenerateSplitError(f"need both classes, got |U+|={pos.size}, |U-|={neg.size}")
    bad = int((neg[None, :] >= pos[:, None]).sum())
    return bad / (pos.size * neg.size)


def sele_loss(scores, errors) -> float:
    """(1/M^2) * #{(u-, u): g(u-) >= g(u)} over wrong samples u- and all u."""
    s = np.asarray(scores, dtype=np.float64)
    e = np.asarray(errors)
    neg = s[e == 1]
    if neg.size == 0:
        return 0.0
    count = int((neg[:, None] >= s[None, :]).sum())
    return count / (s.size**2)


def _pairwise_logloss(pos: np.ndarray, neg: np.ndarray) -> float:
    # mean over all pairs of ln(1 + exp(g(u-) - g(u+))), overflow-safe
    q = neg[None, :] - pos[:, None]
    return float(np.logaddexp(0.0, q).mean())


@dataclass
class BoundReport:
    """Pairwise-loss bound evaluation at one weight vector."""

    reside_loss: float
    rank_error: float
    sele: float
    aurc: float
    loose_bound: float
    tight_bound: float
    unique_error_scores: bool
    sample_count: int
    error_count: int
    aurc_weighted: float

    def to_dict(self) -> dict:
        return {
            "reside_loss": self.reside_loss,
            "rank_error": self.rank_error,
            "sele": self.sele,
            "aurc": self.aurc,
            "loose_bound": self.loose_bound,
            "tight_bound": self.tight_bound,
            "unique_error_scores": self.unique_error_scores,
            "sample_count": self.sample_count,
            "error_count": self.error_count,
            "aurc_weighted": self.aurc_weighted,
            "loose_holds": self.aurc < self.loose_bound,
            "tight_holds": (self.aurc < self.tight_bound) if self.unique_error_scores else None,
        }


def check_aurc_bounds(score_matrix, w, masses, errors) -> BoundReport:
    """Evaluate the AURC upper bounds at aggregation weights ``w``.

    The bound applies to the unweighted AURC (every sample at mass 1/M);
    the mass-weighted AURC is reported alongside.  Raises BoundViolation if
    the loose bound fails, or if the tight bound fails while all wrong
    samples have distinct scores.
    """
    s = np.asarray(getattr(score_matrix, "scores", score_matrix), dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    if s.ndim != 2 or w.shape != (s.shape[1],):
        raise ValueError(f"score matrix {s.shape} incompatible with weights {w.shape}")
    e = np.asarray(errors)
    g = s @ w
    m_total = g.size
    n = int(e.sum())
    if n == 0 or n == m_total:
        raise DegenerateSplitError(f"bound needs 0 < n < M, got n={n}, M={m_total}")

    pos, neg = _split(g, e)
    loss = _pairwise_logloss(pos, neg)
    uniform = np.full(m_total, 1.0 / m_total)
    aurc_uniform = aurc(g, e, uniform)
    aurc_masses = aurc(g, e, masses)
    scale = 2.0 * (m_total - n) * n / (m_total**2 * math.log(2.0))
    loose = scale * loss + 2.0 * n**2 / m_total**2
    tight = scale * loss + n * (n + 1) / m_total**2
    unique = np.unique(neg).size == n
    report = BoundReport(
        reside_loss=loss,
        rank_error=ranking_error(g, e),
        sele=sele_loss(g, e),
        aurc=aurc_uniform,
        loose_bound=loose,
        tight_bound=tight,
        unique_error_scores=bool(unique),
        sample_count=m_total,
        error_count=n,
        aurc_weighted=aurc_masses,
    )
    if not aurc_uniform < loose:
        raise BoundViolation(f"loose bound violated: AURC {aurc_uniform} >= {loose}", report)
    if unique and not aurc_uniform < tight:
        raise BoundViolation(f"tight bound violated: AURC {aurc_uniform} >= {tight}", report)
    return report
