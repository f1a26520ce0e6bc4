"""Synthetic feature datasets for tests and demos.

All generators draw unit-sphere feature vectors.  The informative
constructions place correctly classified samples in tight clusters at two
antipodal poles and wrongly classified ones diffusely on the orthogonal
equator, so centroid probes give correct samples a high best-cosine and a
wide logit margin while errors sit far from every centroid.
"""

from __future__ import annotations

import numpy as np

from .feature_store import FeatureDataset, make_dataset

SPEC_NAMES = ("separable", "pathological", "planted-k", "mixture")

_DIM = 8


def _unit_rows(x: np.ndarray) -> np.ndarray:
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def planted_features(n_per_cluster: int, k: int, dim: int, seed: int, spread: float = 0.1) -> np.ndarray:
    """k clusters of unit vectors around orthogonal directions (90 deg apart)."""
    if dim < k:
        raise ValueError(f"dim={dim} cannot host {k} orthogonal directions")
    rng = np.random.default_rng(seed)
    rows = []
    for j in range(k):
        center = np.zeros(dim)
        center[j] = 1.0
        rows.append(_unit_rows(center + spread * rng.normal(size=(n_per_cluster, dim))))
    x = np.concatenate(rows)
    return x[rng.permutation(x.shape[0])]


def _pole_equator_layer(rng, errors: np.ndarray, labels: np.ndarray, spread: float, dim: int = _DIM) -> np.ndarray:
    """Correct samples near +/-e1 (by label), errors diffuse on the equator."""
    m = errors.shape[0]
    x = np.zeros((m, dim))
    correct = errors == 0
    poles = np.where(labels[correct] == 0, 1.0, -1.0)
    base = np.zeros((int(correct.sum()), dim))
    base[:, 0] = poles
    x[correct] = _unit_rows(base + spread * rng.normal(size=base.shape))
    wrong = ~correct
    ring = rng.normal(size=(int(wrong.sum()), dim))
    ring[:, 0] = 0.05 * rng.normal(size=ring.shape[0])
    x[wrong] = _unit_rows(ring)
    return x


def _noise_layer(rng, m: int, dim: int = _DIM) -> np.ndarray:
    return _unit_rows(rng.normal(size=(m, dim)))


def _logits(rng, labels, errors, correct_margin, error_margin):
    """Final logits with argmax matching labels exactly where errors == 0."""
    m = labels.shape[0]
    z = np.zeros((m, 2))
    margins = np.where(
        errors == 1,
        rng.uniform(*error_margin, size=m),
        rng.uniform(*correct_margin, size=m),
    )
    predicted = np.where(errors == 1, 1 - labels, labels)
    z[np.arange(m), predicted] = margins
    return z


def _error_mask(rng, m: int, rate: float) -> np.ndarray:
    n_err = max(1, min(m - 1, round(rate * m)))
    mask = np.zeros(m, dtype=np.int64)
    mask[rng.permutation(m)[:n_err]] = 1
    return mask


def _subset_ids(m: int, h: int) -> np.ndarray:
    if m < h:
        raise ValueError(f"cannot fill {h} subsets with {m} samples")
    return np.arange(m) % h + 1


def make_pathological(m: int, l: int, h: int, seed: int) -> FeatureDataset:
    """Final-logit confidence anti-correlated with correctness.

    Errors get strictly larger logit margins than correct samples, so every
    margin-monotone CSF ranks them first and the baseline AURC exceeds the
    error rate; hidden layer 1 is informative, the rest are noise.
    """
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, 2, size=m)
    errors = _error_mask(rng, m, 0.3)
    logits = _logits(rng, labels, errors, correct_margin=(0.5, 1.5), error_margin=(2.5, 3.5))
    features = [_pole_equator_layer(rng, errors, labels, spread=0.05)]
    features.extend(_noise_layer(rng, m) for _ in range(l - 1))
    return make_dataset(features, logits, labels, _subset_ids(m, h), h, metadata={"spec": "pathological"})


def make_separable(m: int, l: int, h: int, seed: int) -> FeatureDataset:
    """Hidden layer 1 separates correctness near perfectly; the final
    logits are uninformative (margins independent of correctness)."""
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, 2, size=m)
    errors = _error_mask(rng, m, 0.1)
    logits = _logits(rng, labels, errors, correct_margin=(0.2, 2.0), error_margin=(0.2, 2.0))
    features = [_pole_equator_layer(rng, errors, labels, spread=0.03)]
    features.extend(_noise_layer(rng, m) for _ in range(l - 1))
    return make_dataset(features, logits, labels, _subset_ids(m, h), h, metadata={"spec": "separable"})


def make_planted_k(m: int, l: int, h: int, seed: int, k: int = 3) -> FeatureDataset:
    """Every layer carries k planted clusters; labels/logits are incidental."""
    rng = np.random.default_rng(seed)
    per = m // k
    if per < 1:
        raise ValueError(f"m={m} too small for k={k} clusters")
    features = []
    for i in range(l):
        x = planted_features(per, k, _DIM, seed=int(rng.integers(2**31)), spread=0.1)
        if x.shape[0] < m:  # pad the remainder into the first cluster
            extra = np.zeros((m - x.shape[0], _DIM))
            extra[:, 0] = 1.0
            x = np.concatenate([x, _unit_rows(extra + 0.1 * rng.normal(size=extra.shape))])
        features.append(x[:m])
    labels = rng.integers(0, 2, size=m)
    errors = _error_mask(rng, m, 0.1)
    logits = _logits(rng, labels, errors, correct_margin=(0.5, 2.0), error_margin=(0.3, 1.0))
    return make_dataset(features, logits, labels, _subset_ids(m, h), h, metadata={"spec": "planted-k", "k": k})


def make_mixture(m: int, l: int, h: int, seed: int) -> FeatureDataset:
    """H unequal-size subsets with different error rates and logit quality;
    exercises mass reweighting.  Subset 1 behaves in-distribution (few
    errors, helpful final logits); the others are shifted (frequent errors,
    anti-correlated final confidence)."""
    if h < 1:
        raise ValueError("h must be positive")
    rng = np.random.default_rng(seed)
    weights = np.arange(1, h + 1, dtype=np.float64)
    sizes = np.maximum(1, np.floor(m * weights / weights.sum()).astype(np.int64))
    sizes[-1] += m - sizes.sum()
    subset_ids = np.concatenate([np.full(s, i + 1) for i, s in enumerate(sizes)])

    labels = rng.integers(0, 2, size=m)
    errors = np.zeros(m, dtype=np.int64)
    logits = np.zeros((m, 2))
    for i in range(h):
        members = np.flatnonzero(subset_ids == i + 1)
        shifted = i > 0
        rate = 0.4 if shifted else 0.05
        n_err = max(1, min(members.size - 1, round(rate * members.size))) if members.size > 1 else 0
        errors[rng.permutation(members)[:n_err]] = 1
        sub_err = errors[members]
        if shifted:
            logits[members] = _logits(rng, labels[members], sub_err, (0.5, 1.5), (2.5, 3.5))
        else:
            logits[members] = _logits(rng, labels[members], sub_err, (1.5, 3.0), (0.2, 0.8))
    features = [_pole_equator_layer(rng, errors, labels, spread=0.05)]
    features.extend(_noise_layer(rng, m) for _ in range(l - 1))
    return make_dataset(features, logits, labels, subset_ids, h, metadata={"spec": "mixture"})


def generate(spec: str, m: int, l: int, h: int, seed: int, k: int = 3) -> FeatureDataset:
    if spec == "separable":
        return make_separable(m, l, h, seed)
    if spec == "pathological":
        return make_pathological(m, l, h, seed)
    if spec == "planted-k":
        return make_planted_k(m, l, h, seed, k=k)
    if spec == "mixture":
        return make_mixture(m, l, h, seed)
    raise ValueError(f"unknown spec {spec!r}; choose from {SPEC_NAMES}")
