"""Labeled feature datasets: synthetic generation, file I/O, stratified splits.

Feature files are either CSV (comma separated, no header) or the ``PDL1``
binary layout: magic ``b"PDL1"``, u32 n, u32 dim, then n*dim little-endian
f32 values in row-major order.  Labels are a single-column CSV of
non-negative integers.
"""
from __future__ import annotations

import json
import math
import struct
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, EmptyDatasetError, FormatError, LabelError

MAGIC = b"PDL1"
_HEADER = struct.Struct("<4sII")


@dataclass
class LabeledDataset:
    features: np.ndarray
    labels: np.ndarray
    class_count: int
    name: str = "dataset"
    seed: int = 0

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2 or self.features.shape[0] != self.labels.size:
            raise FormatError(f"features {self.features.shape} do not match {self.labels.size} labels")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.class_count):
            raise LabelError(f"labels must lie in [0, {self.class_count})")

    def __len__(self) -> int:
        return self.labels.size

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def subset(self, index, name: str | None = None) -> "LabeledDataset":
        index = np.asarray(index, dtype=np.int64)
        return LabeledDataset(self.features[index], self.labels[index], self.class_count,
                              name or self.name, self.seed)

    def metadata(self) -> dict:
        return {"name": self.name, "n": len(self), "dim": self.dim, "C": self.class_count, "seed": self.seed}


def gen_synthetic(C: int = 10, per_class: int = 50, dim: int = 32, noise_sigma: float = 0.3,
                  seed: int = 0) -> LabeledDataset:
    """Gaussian blobs around C random unit directions.

    Samples are ordered class by class.
    """
    if C < 2 or per_class < 2 or dim < 2 or noise_sigma < 0:
        raise ConfigError(
            f"need C >= 2, per_class >= 2, dim >= 2, sigma >= 0; got {C}, {per_class}, {dim}, {noise_sigma}"
        )
    rng = np.random.default_rng(seed)
    centers = rng.standard_normal((C, dim))
    centers /= np.linalg.norm(centers, axis=1, keepdims=True)
    labels = np.repeat(np.arange(C), per_class)
    features = centers[labels] + noise_sigma * rng.standard_normal((C * per_class, dim))
    return LabeledDataset(features, labels, C, name=f"synthetic-C{C}-n{per_class}-d{dim}", seed=seed)


# ---------------------------------------------------------------- writing

def write_features_binary(path, features: np.ndarray) -> None:
    X = np.asarray(features)
    n, dim = X.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, n, dim))
        fh.write(np.ascontiguousarray(X, dtype="<f4").tobytes())


def write_features_csv(path, features: np.ndarray) -> None:
    np.savetxt(path, np.asarray(features, dtype=np.float64), delimiter=",", fmt="%.17g")


def write_labels_csv(path, labels) -> None:
    np.savetxt(path, np.asarray(labels, dtype=np.int64), fmt="%d")


def save_dataset(ds: LabeledDataset, out_dir) -> dict[str, Path]:
    """Write ``features.pdl1``, ``labels.csv`` and ``metadata.json`` into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"features": out / "features.pdl1", "labels": out / "labels.csv", "metadata": out / "metadata.json"}
    write_features_binary(paths["features"], ds.features)
    write_labels_csv(paths["labels"], ds.labels)
    paths["metadata"].write_text(json.dumps(ds.metadata(), indent=2, sort_keys=True) + "\n")
    return paths


# ---------------------------------------------------------------- reading

def read_features_binary(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: header truncated at byte offset {len(raw)} (need {_HEADER.size} bytes)")
    magic, n, dim = _HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r} at byte offset 0")
    if n == 0:
        raise EmptyDatasetError(f"{path}: file declares zero samples")
    expected = _HEADER.size + 4 * n * dim
    if len(raw) != expected:
        raise FormatError(f"{path}: payload size mismatch at byte offset {min(len(raw), expected)} "
                          f"(header declares {n}x{dim}, file has {len(raw)} bytes, expected {expected})")
    return np.frombuffer(raw, dtype="<f4", offset=_HEADER.size).astype(np.float64).reshape(n, dim)


def read_features_csv(path) -> np.ndarray:
    try:
        X = np.loadtxt(path, delimiter=",", dtype=np.float64, ndmin=2)
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from None
    if X.size == 0:
        raise EmptyDatasetError(f"{path}: no rows")
    return X


def read_features(path) -> np.ndarray:
    with open(path, "rb") as fh:
        head = fh.read(4)
    return read_features_binary(path) if head == MAGIC else read_features_csv(path)


def read_labels(path) -> np.ndarray:
    try:
        y = np.loadtxt(path, delimiter=",", dtype=np.float64, ndmin=1)
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from None
    if y.ndim != 1:
        raise FormatError(f"{path}: labels must be a single column")
    if np.any(y < 0) or np.any(y != np.round(y)):
        raise FormatError(f"{path}: labels must be non-negative integers")
    return y.astype(np.int64)


def load_dataset(features_path, labels_path, name: str | None = None) -> LabeledDataset:
    X = read_features(features_path)
    y = read_labels(labels_path)
    if X.shape[0] != y.size:
        raise FormatError(f"row-count mismatch: {X.shape[0]} feature rows vs {y.size} labels")
    if y.size == 0:
        raise EmptyDatasetError("no samples")
    present = np.unique(y)
    if present.size != present[-1] + 1:
        remap = {int(old): new for new, old in enumerate(present)}
        warnings.warn(f"labels are not contiguous; remapping {remap}", stacklevel=2)
        y = np.searchsorted(present, y)
    return LabeledDataset(X, y, int(y.max()) + 1, name or Path(features_path).stem, 0)


# ---------------------------------------------------------------- splitting

def split(ds: LabeledDataset, val_fraction: float = 0.1, seed: int = 0) -> tuple[LabeledDataset, LabeledDataset]:
    """Stratified train/validation split.

    Each class sends ``ceil(val_fraction * n_c)`` samples to validation,
    capped so at least one stays in training.
    """
    if not 0 < val_fraction < 1:
        raise ConfigError(f"val_fraction must be in (0, 1), got {val_fraction}")
    rng = np.random.default_rng(seed)
    train_idx, val_idx = [], []
    for c in range(ds.class_count):
        members = np.flatnonzero(ds.labels == c)
        if members.size == 0:
            continue
        if members.size == 1:
            warnings.warn(f"class {c} has a single sample; keeping it in the training split", stacklevel=2)
            train_idx.append(members)
            continue
        members = rng.permutation(members)
        # round first so 0.1 * 30 does not ceil to 4
        k = min(math.ceil(round(val_fraction * members.size, 9)), members.size - 1)
        val_idx.append(members[:k])
        train_idx.append(members[k:])
    tr = np.sort(np.concatenate(train_idx))
    va = np.sort(np.concatenate(val_idx)) if val_idx else np.zeros(0, dtype=np.int64)
    return ds.subset(tr, f"{ds.name}-train"), ds.subset(va, f"{ds.name}-val")
