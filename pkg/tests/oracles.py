"""Independent reference implementations used to freeze expected values.

Everything here is deliberately written the slow way (explicit loops,
enumeration, finite differences) and never calls the code paths it checks.
"""

from __future__ import annotations

import math
from itertools import permutations

import numpy as np


def aurc_all_thresholds(scores, errors, masses):
    """Mass-weighted mean over samples of the selective risk at that
    sample's own confidence threshold (accept iff score >= t)."""
    scores = np.asarray(scores, dtype=float)
    errors = np.asarray(errors, dtype=float)
    masses = np.asarray(masses, dtype=float)
    total = 0.0
    for mass_i, t in zip(masses, scores):
        accepted = scores >= t
        cov = masses[accepted].sum()
        risk = (errors[accepted] * masses[accepted]).sum() / cov
        total += mass_i * risk
    return float(total)


def min_aurc_by_enumeration(errors, masses, aurc_fn):
    """Minimum AURC over every assignment of distinct scores to samples."""
    m = len(errors)
    base = np.arange(m, 0, -1, dtype=float)  # distinct descending scores
    best = math.inf
    for perm in permutations(range(m)):
        scores = np.empty(m)
        scores[list(perm)] = base
        best = min(best, aurc_fn(scores, errors, masses))
    return best


def perfect_ranking_aurc(m: int, n: int) -> float:
    """Uniform-mass AURC when all n errors rank strictly below the rest."""
    return sum(k / (m - n + k) for k in range(1, n + 1)) / m


def pairwise_loss_enumerated(w, rows_pos, rows_neg):
    """Mean of ln(1 + exp(g(u-) - g(u+))) by explicit double loop."""
    w = np.asarray(w, dtype=float)
    total = 0.0
    for sp in np.asarray(rows_pos, dtype=float):
        for sn in np.asarray(rows_neg, dtype=float):
            total += math.log(1.0 + math.exp(float(np.dot(w, sn) - np.dot(w, sp))))
    return total / (len(rows_pos) * len(rows_neg))


def central_difference_grad(loss_fn, w, step=1e-5):
    w = np.asarray(w, dtype=float)
    grad = np.zeros_like(w)
    for i in range(w.size):
        up, down = w.copy(), w.copy()
        up[i] += step
        down[i] -= step
        grad[i] = (loss_fn(up) - loss_fn(down)) / (2.0 * step)
    return grad


def best_two_cluster_partition(points):
    """Exhaustive optimal spherical 2-means on a handful of unit vectors.

    Returns the pair of normalized group-sum directions maximizing total
    cosine similarity; for a fixed partition that maximum is the sum of the
    group resultant lengths.
    """
    pts = np.asarray(points, dtype=float)
    m = pts.shape[0]
    best_value, best_centroids = -math.inf, None
    for mask_bits in range(1, 2**m - 1):
        mask = np.array([(mask_bits >> i) & 1 for i in range(m)], dtype=bool)
        sum_a, sum_b = pts[mask].sum(axis=0), pts[~mask].sum(axis=0)
        value = np.linalg.norm(sum_a) + np.linalg.norm(sum_b)
        if value > best_value:
            ca = sum_a / np.linalg.norm(sum_a) if np.linalg.norm(sum_a) > 0 else sum_a
            cb = sum_b / np.linalg.norm(sum_b) if np.linalg.norm(sum_b) > 0 else sum_b
            best_value, best_centroids = value, (ca, cb)
    return best_value, best_centroids
