"""On-disk dataset of stored detector activations.

A dataset directory holds a ``manifest.json`` plus little-endian binary
blobs: one float32 matrix per hidden layer, the detector's final 2-class
logits, uint8 labels and uint16 subset ids.  Loading validates shapes,
finiteness, label range and subset coverage; the loaded arrays are made
read-only so a dataset can be shared across threads.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

FORMAT_VERSION = 1
MANIFEST_NAME = "manifest.json"

_MASS_TOL = 1e-9


class DatasetFormatError(ValueError):
    """A dataset directory or in-memory dataset violates the format contract."""


@dataclass
class FeatureDataset:
    """Per-sample layer features, final logits, labels and subset ids.

    ``features[i]`` is the ``sample_count x layer_dims[i]`` float32 matrix of
    hidden layer ``i + 1`` (layers are 1-based in file names and reports).
    ``subset_ids`` take values in ``[1, subset_count]`` and mark which
    mixture component each sample belongs to.
    """

    sample_count: int
    layer_count: int
    layer_dims: list[int]
    features: list[np.ndarray]
    final_logits: np.ndarray
    labels: np.ndarray
    subset_ids: np.ndarray
    subset_count: int
    metadata: dict = field(default_factory=dict)

    def validate(self) -> None:
        m, l = self.sample_count, self.layer_count
        if m <= 0 or l <= 0:
            raise DatasetFormatError(f"sample_count={m} and layer_count={l} must be positive")
        if self.subset_count <= 0:
            raise DatasetFormatError(f"subset_count={self.subset_count} must be positive")
        if len(self.layer_dims) != l or any(d <= 0 for d in self.layer_dims):
            raise DatasetFormatError(f"layer_dims must hold {l} positive ints, got {self.layer_dims}")
        if len(self.features) != l:
            raise DatasetFormatError(f"expected {l} layer matrices, got {len(self.features)}")
        for i, (mat, d) in enumerate(zip(self.features, self.layer_dims), start=1):
            if mat.shape != (m, d):
                raise DatasetFormatError(f"layer {i}: expected shape {(m, d)}, got {mat.shape}")
            if not np.isfinite(mat).all():
                raise DatasetFormatError(f"layer {i}: non-finite feature value")
        if self.final_logits.shape != (m, 2):
            raise DatasetFormatError(
                f"final_logits: expected shape {(m, 2)} (binary task), got {self.final_logits.shape}"
            )
        if not np.isfinite(self.final_logits).all():
            raise DatasetFormatError("final_logits: non-finite value")
        if self.labels.shape != (m,):
            raise DatasetFormatError(f"labels: expected {m} entries, got shape {self.labels.shape}")
        bad = ~np.isin(self.labels, (0, 1))
        if bad.any():
            raise DatasetFormatError(f"labels: value {int(self.labels[bad][0])} outside {{0, 1}}")
        if self.subset_ids.shape != (m,):
            raise DatasetFormatError(f"subset_ids: expected {m} entries, got shape {self.subset_ids.shape}")
        ids = np.asarray(self.subset_ids, dtype=np.int64)
        if ids.min() < 1 or ids.max() > self.subset_count:
            raise DatasetFormatError(
                f"subset_ids must lie in [1, {self.subset_count}], got range [{ids.min()}, {ids.max()}]"
            )
        present = np.unique(ids)
        missing = sorted(set(range(1, self.subset_count + 1)) - set(present.tolist()))
        if missing:
            raise DatasetFormatError(f"subset {missing[0]} is empty (H={self.subset_count})")

    def freeze(self) -> "FeatureDataset":
        for arr in (*self.features, self.final_logits, self.labels, self.subset_ids):
            arr.flags.writeable = False
        return self


@dataclass(frozen=True)
class CorrectnessFlags:
    """0/1 error indicators: 1 where the detector's argmax misses the label."""

    errors: np.ndarray

    def error_rate(self, masses: np.ndarray) -> float:
        return float(np.dot(np.asarray(masses, dtype=np.float64), self.errors))


@dataclass(frozen=True)
class SampleMasses:
    """Per-sample masses 1/(H*N_m); each subset carries total mass 1/H."""

    masses: np.ndarray


def make_dataset(
    features: list[np.ndarray],
    final_logits: np.ndarray,
    labels: np.ndarray,
    subset_ids: np.ndarray,
    subset_count: int,
    metadata: dict | None = None,
) -> FeatureDataset:
    """Assemble a dataset in the canonical dtypes and validate it."""
    feats = [np.ascontiguousarray(f, dtype="<f4") for f in features]
    ds = FeatureDataset(
        sample_count=feats[0].shape[0] if feats else 0,
        layer_count=len(feats),
        layer_dims=[f.shape[1] for f in feats],
        features=feats,
        final_logits=np.ascontiguousarray(final_logits, dtype="<f4"),
        labels=np.ascontiguousarray(labels, dtype=np.uint8),
        subset_ids=np.ascontiguousarray(subset_ids, dtype="<u2"),
        subset_count=int(subset_count),
        metadata=metadata or {},
    )
    ds.validate()
    return ds.freeze()


def _read_blob(directory: Path, name: str, dtype: str, count: int, what: str) -> np.ndarray:
    path = directory / name
    if not path.is_file():
        raise FileNotFoundError(f"dataset blob missing: {path}")
    raw = path.read_bytes()
    itemsize = np.dtype(dtype).itemsize
    if len(raw) != count * itemsize:
        raise DatasetFormatError(
            f"{what} ({name}): expected {count * itemsize} bytes for {count} x {dtype}, got {len(raw)}"
        )
    return np.frombuffer(raw, dtype=dtype).copy()


def load_dataset(path: str | Path) -> FeatureDataset:
    """Load and validate a dataset directory.

    Raises FileNotFoundError for missing files and DatasetFormatError for
    byte-length mismatches (naming the offending layer), non-finite values,
    labels outside {0, 1} and empty subsets.
    """
    directory = Path(path)
    manifest_path = directory / MANIFEST_NAME
    if not manifest_path.is_file():
        raise FileNotFoundError(f"manifest missing: {manifest_path}")
    manifest = json.loads(manifest_path.read_text())
    version = manifest.get("format_version")
    if version != FORMAT_VERSION:
        raise DatasetFormatError(f"unsupported format_version {version!r} (expected {FORMAT_VERSION})")
    try:
        m = int(manifest["M"])
        l = int(manifest["L"])
        h = int(manifest["H"])
        dims = [int(d) for d in manifest["layer_dims"]]
        files = manifest["files"]
        layer_files = list(files["layers"])
    except KeyError as exc:
        raise DatasetFormatError(f"manifest missing field {exc}") from exc
    if len(dims) != l or len(layer_files) != l:
        raise DatasetFormatError(f"manifest declares L={l} but lists {len(dims)} dims / {len(layer_files)} layer files")

    labels = _read_blob(directory, files["labels"], "u1", m, "labels")
    subset_ids = _read_blob(directory, files["subset_ids"], "<u2", m, "subset_ids")
    final_logits = _read_blob(directory, files["final_logits"], "<f4", m * 2, "final_logits").reshape(m, 2)
    features = []
    for i, (name, d) in enumerate(zip(layer_files, dims), start=1):
        blob = _read_blob(directory, name, "<f4", m * d, f"layer {i}")
        features.append(blob.reshape(m, d))

    ds = FeatureDataset(
        sample_count=m,
        layer_count=l,
        layer_dims=dims,
        features=features,
        final_logits=final_logits,
        labels=labels,
        subset_ids=subset_ids,
        subset_count=h,
        metadata=manifest.get("metadata", {}),
    )
    ds.validate()
    return ds.freeze()


def write_dataset(dataset: FeatureDataset, path: str | Path) -> Path:
    """Write a dataset directory; inverse of :func:`load_dataset` bit for bit."""
    dataset.validate()
    directory = Path(path)
    directory.mkdir(parents=True, exist_ok=True)
    layer_files = [f"layer_{i}.bin" for i in range(1, dataset.layer_count + 1)]
    manifest = {
        "format_version": FORMAT_VERSION,
        "M": dataset.sample_count,
        "L": dataset.layer_count,
        "H": dataset.subset_count,
        "layer_dims": list(dataset.layer_dims),
        "files": {
            "labels": "labels.bin",
            "final_logits": "final_logits.bin",
            "subset_ids": "subset_ids.bin",
            "layers": layer_files,
        },
        "metadata": dataset.metadata,
    }
    (directory / MANIFEST_NAME).write_text(json.dumps(manifest, indent=2, sort_keys=True))
    (directory / "labels.bin").write_bytes(np.ascontiguousarray(dataset.labels, dtype="u1").tobytes())
    (directory / "subset_ids.bin").write_bytes(np.ascontiguousarray(dataset.subset_ids, dtype="<u2").tobytes())
    (directory / "final_logits.bin").write_bytes(np.ascontiguousarray(dataset.final_logits, dtype="<f4").tobytes())
    for name, mat in zip(layer_files, dataset.features):
        (directory / name).write_bytes(np.ascontiguousarray(mat, dtype="<f4").tobytes())
    return directory


def derive_correctness(dataset: FeatureDataset) -> CorrectnessFlags:
    """error_i = 1 iff argmax of the final logits differs from the label.

    Argmax ties resolve to the lower class index.
    """
    predicted = np.argmax(dataset.final_logits, axis=1)
    errors = (predicted != dataset.labels).astype(np.uint8)
    errors.flags.writeable = False
    return CorrectnessFlags(errors=errors)


def compute_masses(dataset: FeatureDataset) -> SampleMasses:
    """mass = 1/(H*N_m) for a sample in subset m of size N_m."""
    ids = np.asarray(dataset.subset_ids, dtype=np.int64)
    counts = np.bincount(ids, minlength=dataset.subset_count + 1)
    masses = 1.0 / (dataset.subset_count * counts[ids].astype(np.float64))
    total = masses.sum()
    if abs(total - 1.0) > _MASS_TOL:
        raise DatasetFormatError(f"masses sum to {total!r}, expected 1")
    masses.flags.writeable = False
    return SampleMasses(masses=masses)


def split_by_correctness(dataset: FeatureDataset, flags: CorrectnessFlags) -> tuple[np.ndarray, np.ndarray]:
    """Index sets (U+, U-) of correctly and wrongly classified samples."""
    errors = np.asarray(flags.errors)
    if errors.shape != (dataset.sample_count,):
        raise ValueError(f"flags cover {errors.shape[0]} samples, dataset has {dataset.sample_count}")
    idx = np.arange(dataset.sample_count)
    return idx[errors == 0], idx[errors == 1]


def dataset_hash(dataset: FeatureDataset) -> str:
    """sha256 over the canonical byte content; used for probe/score provenance."""
    digest = hashlib.sha256()
    digest.update(f"v{FORMAT_VERSION};M={dataset.sample_count};L={dataset.layer_count};H={dataset.subset_count};".encode())
    digest.update(",".join(map(str, dataset.layer_dims)).encode())
    digest.update(np.ascontiguousarray(dataset.labels, dtype="u1").tobytes())
    digest.update(np.ascontiguousarray(dataset.subset_ids, dtype="<u2").tobytes())
    digest.update(np.ascontiguousarray(dataset.final_logits, dtype="<f4").tobytes())
    for mat in dataset.features:
        digest.update(np.ascontiguousarray(mat, dtype="<f4").tobytes())
    return digest.hexdigest()
