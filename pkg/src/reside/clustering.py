"""Centroid probes over stored layer features.

Each hidden layer gets a set of unit-norm centroids fitted by spherical
k-means on the l2-normalized feature vectors of the training set; the
number of centroids is picked by cosine-distance silhouette analysis.
Projecting a normalized feature vector onto the centroid matrix yields
generalized layerwise logits (cosine similarities in [-1, 1]) that any
logit-based confidence score can consume.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .feature_store import FeatureDataset, dataset_hash

NORM_FLOOR = 1e-6
_EPS = 1e-12

DEFAULT_MAX_ITERS = 100
DEFAULT_TOL = 1e-6
DEFAULT_K_RANGE = (2, 8)
SILHOUETTE_SUBSAMPLE_CAP = 2000


@dataclass
class LayerCentroids:
    """Unit-norm centroid matrix (d x K, centroids as columns) for one layer."""

    layer_index: int
    k: int
    centroids: np.ndarray
    silhouette: float
    seed: int
    # total cosine similarity after each assignment step; non-decreasing
    objective_curve: list[float] = field(default_factory=list, repr=False)

    @property
    def dim(self) -> int:
        return self.centroids.shape[0]


@dataclass
class ProbeSet:
    """One LayerCentroids per hidden layer plus training-data provenance."""

    layers: list[LayerCentroids]
    dataset_hash: str
    seed: int

    def validate_against(self, dataset: FeatureDataset) -> None:
        if len(self.layers) != dataset.layer_count:
            raise ValueError(f"probe set has {len(self.layers)} layers, dataset has {dataset.layer_count}")
        for probe, d in zip(self.layers, dataset.layer_dims):
            if probe.dim != d:
                raise ValueError(f"layer {probe.layer_index}: probe dim {probe.dim} != dataset dim {d}")


def normalize(h: np.ndarray) -> np.ndarray:
    """l2-normalize a vector; inputs with norm below 1e-6 map near zero."""
    h = np.asarray(h, dtype=np.float64)
    if not np.isfinite(h).all():
        raise ValueError("non-finite input to normalize")
    n = float(np.linalg.norm(h))
    if n < NORM_FLOOR:
        return h / (n + _EPS)
    return h / n


def normalize_rows(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if not np.isfinite(x).all():
        raise ValueError("non-finite input to normalize_rows")
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    return x / np.where(norms < NORM_FLOOR, norms + _EPS, norms)


def _guarded_pick(xn: np.ndarray, idx: int, slot: int) -> np.ndarray:
    # seeding from a near-zero row would break the unit-norm invariant
    row = xn[idx]
    if np.linalg.norm(row) < 0.5:
        basis = np.zeros(xn.shape[1])
        basis[slot % xn.shape[1]] = 1.0
        return basis
    return row


def _init_plus_plus(xn: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++-style seeding with cosine distance on normalized rows."""
    m, d = xn.shape
    centroids = np.empty((d, k))
    first = int(rng.integers(m))
    centroids[:, 0] = _guarded_pick(xn, first, 0)
    dist = np.clip(1.0 - xn @ centroids[:, 0], 0.0, None)
    for j in range(1, k):
        weights = dist**2
        total = weights.sum()
        if total <= 0.0:
            idx = int(rng.integers(m))
        else:
            idx = int(rng.choice(m, p=weights / total))
        centroids[:, j] = _guarded_pick(xn, idx, j)
        dist = np.minimum(dist, np.clip(1.0 - xn @ centroids[:, j], 0.0, None))
    return centroids


def _reseed_empty(xn: np.ndarray, centroids: np.ndarray, empty: list[int]) -> None:
    # empty-cluster rule: move the centroid to the worst-served sample
    valid = np.linalg.norm(xn, axis=1) >= 0.5
    for slot in empty:
        best_sim = (xn @ centroids).max(axis=1)
        best_sim[~valid] = np.inf
        idx = int(np.argmin(best_sim))
        centroids[:, slot] = _guarded_pick(xn, idx, slot)


def _fit(xn, k, rng, max_iters, tol):
    m = xn.shape[0]
    centroids = _init_plus_plus(xn, k, rng)
    labels = np.zeros(m, dtype=np.int64)
    curve: list[float] = []
    prev = -np.inf
    for _ in range(max_iters):
        sims = xn @ centroids
        labels = sims.argmax(axis=1)
        objective = float(sims[np.arange(m), labels].sum())
        curve.append(objective)
        if objective - prev < tol:
            break
        prev = objective
        updated = centroids.copy()
        empty = []
        for j in range(k):
            members = labels == j
            if not members.any():
                empty.append(j)
                continue
            s = xn[members].sum(axis=0)
            norm = np.linalg.norm(s)
            if norm <= _EPS:
                empty.append(j)  # exact cancellation, treat like empty
                continue
            updated[:, j] = s / norm
        if empty:
            _reseed_empty(xn, updated, empty)
        centroids = updated
    return centroids, labels, curve


def spherical_kmeans(
    features: np.ndarray,
    k: int,
    seed: int,
    max_iters: int = DEFAULT_MAX_ITERS,
    tol: float = DEFAULT_TOL,
    layer_index: int = 1,
) -> LayerCentroids:
    """Fit k unit-norm centroids by alternating max-cosine assignment and
    normalized-mean updates; the total cosine objective never decreases.

    Deterministic given (features, k, seed, max_iters, tol).
    """
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"features must be 2-d, got shape {x.shape}")
    m = x.shape[0]
    if k < 2:
        raise ValueError(f"k={k} must be at least 2")
    if k > m:
        raise ValueError(f"k={k} exceeds sample count {m}")
    xn = normalize_rows(x)
    rng = np.random.default_rng(seed)
    centroids, _, curve = _fit(xn, k, rng, max_iters, tol)
    return LayerCentroids(
        layer_index=layer_index,
        k=k,
        centroids=centroids,
        silhouette=float("nan"),
        seed=seed,
        objective_curve=curve,
    )


def _mean_silhouette(xn: np.ndarray, labels: np.ndarray) -> float:
    """Mean silhouette with cosine distance 1 - cos; singleton clusters score 0."""
    present = np.unique(labels)
    if present.size < 2:
        return -1.0
    dist = np.clip(1.0 - xn @ xn.T, 0.0, None)
    m = xn.shape[0]
    counts = {int(c): int((labels == c).sum()) for c in present}
    scores = np.zeros(m)
    cluster_sums = {int(c): dist[:, labels == c].sum(axis=1) for c in present}
    for i in range(m):
        own = int(labels[i])
        if counts[own] == 1:
            continue  # silhouette 0 by convention
        a = cluster_sums[own][i] / (counts[own] - 1)
        b = min(cluster_sums[c][i] / counts[c] for c in counts if c != own)
        denom = max(a, b)
        scores[i] = 0.0 if denom == 0.0 else (b - a) / denom
    return float(scores.mean())


def _select_and_fit(xn, k_min, k_max, seed, max_iters, tol, subsample_cap):
    m = xn.shape[0]
    if k_min < 2:
        raise ValueError(f"k_min={k_min} must be at least 2")
    if k_max < k_min:
        raise ValueError(f"empty K range [{k_min}, {k_max}]")
    if k_max > m:
        raise ValueError(f"k_max={k_max} exceeds sample count {m}")
    if m > subsample_cap:
        sub_rng = np.random.default_rng([seed, 0x51])
        sub_idx = np.sort(sub_rng.choice(m, size=subsample_cap, replace=False))
    else:
        sub_idx = None
    scores: dict[int, float] = {}
    best_k, best_score, best_fit = None, -np.inf, None
    for k in range(k_min, k_max + 1):
        rng = np.random.default_rng(seed)
        centroids, labels, curve = _fit(xn, k, rng, max_iters, tol)
        if sub_idx is None:
            score = _mean_silhouette(xn, labels)
        else:
            score = _mean_silhouette(xn[sub_idx], labels[sub_idx])
        scores[k] = score
        if score > best_score:  # ties keep the smaller K
            best_k, best_score, best_fit = k, score, (centroids, curve)
    return best_k, best_score, best_fit, scores


def silhouette_select_k(
    features: np.ndarray,
    k_min: int,
    k_max: int,
    seed: int,
    max_iters: int = DEFAULT_MAX_ITERS,
    tol: float = DEFAULT_TOL,
    subsample_cap: int = SILHOUETTE_SUBSAMPLE_CAP,
) -> tuple[int, dict[int, float]]:
    """Pick K in [k_min, k_max] maximizing mean cosine silhouette.

    One seeded spherical k-means run per candidate K; ties go to the
    smaller K.  Silhouette uses all samples up to ``subsample_cap``, then a
    seeded subsample (pairwise distances are quadratic in M).
    """
    xn = normalize_rows(np.asarray(features, dtype=np.float64))
    best_k, _, _, scores = _select_and_fit(xn, k_min, k_max, seed, max_iters, tol, subsample_cap)
    return best_k, scores


def build_probes(
    train_dataset: FeatureDataset,
    k_min: int = DEFAULT_K_RANGE[0],
    k_max: int = DEFAULT_K_RANGE[1],
    seed: int = 0,
    max_iters: int = DEFAULT_MAX_ITERS,
    tol: float = DEFAULT_TOL,
) -> ProbeSet:
    """Fit one silhouette-selected centroid probe per hidden layer."""
    layers = []
    for i, mat in enumerate(train_dataset.features, start=1):
        xn = normalize_rows(mat)
        best_k, best_score, best_fit, _ = _select_and_fit(
            xn, k_min, k_max, seed, max_iters, tol, SILHOUETTE_SUBSAMPLE_CAP
        )
        centroids, curve = best_fit
        layers.append(
            LayerCentroids(
                layer_index=i,
                k=best_k,
                centroids=centroids,
                silhouette=best_score,
                seed=seed,
                objective_curve=curve,
            )
        )
    return ProbeSet(layers=layers, dataset_hash=dataset_hash(train_dataset), seed=seed)


def ulp_logits(probe: LayerCentroids, h: np.ndarray) -> np.ndarray:
    """Generalized logits for one feature vector: centroid cosines in [-1, 1]."""
    h = np.asarray(h, dtype=np.float64)
    if h.shape != (probe.dim,):
        raise ValueError(f"feature dim {h.shape} does not match probe dim ({probe.dim},)")
    return probe.centroids.T @ normalize(h)


def layer_logits(probe: LayerCentroids, features: np.ndarray) -> np.ndarray:
    """Row-wise :func:`ulp_logits` for an M x d feature matrix."""
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != probe.dim:
        raise ValueError(f"feature matrix shape {x.shape} does not match probe dim {probe.dim}")
    return normalize_rows(x) @ probe.centroids


def save_probes(probes: ProbeSet, path: str | Path) -> Path:
    doc = {
        "format_version": 1,
        "seed": probes.seed,
        "dataset_hash": probes.dataset_hash,
        "layers": [
            {
                "layer_index": p.layer_index,
                "k": p.k,
                "dim": p.dim,
                "silhouette": p.silhouette,
                "centroids": np.asarray(p.centroids, dtype=np.float64).reshape(-1).tolist(),
            }
            for p in probes.layers
        ],
    }
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(doc, sort_keys=True))
    return out


def load_probes(path: str | Path) -> ProbeSet:
    doc = json.loads(Path(path).read_text())
    layers = []
    for entry in doc["layers"]:
        centroids = np.asarray(entry["centroids"], dtype=np.float64).reshape(entry["dim"], entry["k"])
        layers.append(
            LayerCentroids(
                layer_index=int(entry["layer_index"]),
                k=int(entry["k"]),
                centroids=centroids,
                silhouette=float(entry["silhouette"]),
                seed=int(doc["seed"]),
            )
        )
    layers.sort(key=lambda p: p.layer_index)
    return ProbeSet(layers=layers, dataset_hash=doc["dataset_hash"], seed=int(doc["seed"]))
