"""Feature datasets, synthetic long-tail generation, DCRF/CSV I/O and samplers."""

import csv
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._rng import derive_rng

DCRF_MAGIC = b"DCRF"
DCRF_VERSION = 1
# magic, version (u32), N (u64), D (u32), K (u32)
_DCRF_HEADER = struct.Struct("<4sIQII")


class DcrfError(ValueError):
    """Base class for malformed DCRF feature files."""


class BadMagicError(DcrfError):
    pass


class VersionMismatchError(DcrfError):
    pass


class TruncatedFileError(DcrfError):
    pass


class LabelRangeError(DcrfError):
    pass


@dataclass(frozen=True, eq=False)
class FeatureDataset:
    """Labeled feature vectors. Arrays are frozen (read-only) after construction."""

    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    class_counts: np.ndarray = field(init=False)

    def __post_init__(self):
        features = np.array(self.features, copy=True)
        if features.dtype.kind != "f":
            features = features.astype(np.float64)
        labels = np.array(self.labels, dtype=np.int64, copy=True)
        if features.ndim != 2:
            raise ValueError(f"features must be a 2-D matrix, got shape {features.shape}")
        if labels.shape != (features.shape[0],):
            raise ValueError(f"expected {features.shape[0]} labels, got shape {labels.shape}")
        if int(self.num_classes) < 1:
            raise ValueError("num_classes must be positive")
        if labels.size and (labels.min() < 0 or labels.max() >= self.num_classes):
            raise LabelRangeError(f"labels must lie in [0, {self.num_classes})")
        if not np.all(np.isfinite(features)):
            raise ValueError("features contain non-finite values")
        features.setflags(write=False)
        labels.setflags(write=False)
        counts = np.bincount(labels, minlength=int(self.num_classes)).astype(np.int64)
        counts.setflags(write=False)
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "num_classes", int(self.num_classes))
        object.__setattr__(self, "class_counts", counts)

    def __len__(self):
        return self.features.shape[0]

    @property
    def dim(self):
        return self.features.shape[1]

    def class_indices(self, k):
        return np.flatnonzero(self.labels == k)

    def subset(self, indices):
        indices = np.asarray(indices, dtype=np.int64)
        return FeatureDataset(self.features[indices], self.labels[indices], self.num_classes)


@dataclass(frozen=True)
class LongTailSpec:
    """Recipe for a synthetic long-tailed feature dataset.

    Class means are non-negative (folded Gaussian), mimicking post-ReLU
    embeddings whose class prototypes share a common positive cone. Tail
    classes are those with at most ``head_threshold`` training samples;
    their test means are pulled by ``drift_strength`` toward the most
    cosine-similar head-class mean.
    """

    num_classes: int
    samples_max: int
    imbalance_factor: float
    dim: int = 32
    cluster_spread: float = 0.4
    drift_strength: float = 0.0
    seed: int = 0
    test_per_class: int = 50
    head_threshold: float = 100

    def validate(self):
        if self.num_classes < 2:
            raise ValueError("num_classes must be at least 2")
        if not self.imbalance_factor > 1:
            raise ValueError("imbalance_factor must be greater than 1")
        if self.samples_max < self.num_classes:
            raise ValueError("samples_max must be at least num_classes")
        if self.dim < 1:
            raise ValueError("dim must be positive")
        if self.cluster_spread < 0:
            raise ValueError("cluster_spread must be non-negative")
        if not 0.0 <= self.drift_strength <= 1.0:
            raise ValueError("drift_strength must lie in [0, 1]")
        if self.test_per_class < 1:
            raise ValueError("test_per_class must be positive")


@dataclass(frozen=True, eq=False)
class Batch:
    indices: np.ndarray
    features: np.ndarray
    labels: np.ndarray

    def __len__(self):
        return self.indices.shape[0]


def longtail_counts(num_classes, samples_max, imbalance_factor):
    """Exponentially decaying class sizes from ``samples_max`` down to ``samples_max / imbalance_factor``.

    Rounds half away from zero with a floor of one sample per class.
    """
    k = np.arange(num_classes, dtype=np.float64)
    raw = samples_max * imbalance_factor ** (-k / (num_classes - 1))
    return np.maximum(np.floor(raw + 0.5), 1).astype(np.int64)


def _cosine_rows(a, b):
    an = a / np.linalg.norm(a, axis=1, keepdims=True)
    bn = b / np.linalg.norm(b, axis=1, keepdims=True)
    return an @ bn.T


def generate_longtail(spec):
    """Draw (train, test) datasets from ``spec``. Test sets are class balanced."""
    spec.validate()
    rng = derive_rng(spec.seed, "generator")
    K, D = spec.num_classes, spec.dim
    counts = longtail_counts(K, spec.samples_max, spec.imbalance_factor)

    means = np.abs(rng.standard_normal((K, D)))
    # all-zero means would make cosine similarity undefined
    means[np.linalg.norm(means, axis=1) == 0, 0] = 1.0

    test_means = means.copy()
    head = np.flatnonzero(counts > spec.head_threshold)
    tail = np.flatnonzero(counts <= spec.head_threshold)
    if head.size and tail.size and spec.drift_strength > 0:
        sim = _cosine_rows(means[tail], means[head])
        nearest = head[np.argmax(sim, axis=1)]
        test_means[tail] = means[tail] + spec.drift_strength * (means[nearest] - means[tail])

    train_x, train_y = [], []
    for k in range(K):
        train_x.append(means[k] + spec.cluster_spread * rng.standard_normal((counts[k], D)))
        train_y.append(np.full(counts[k], k))
    test_x, test_y = [], []
    for k in range(K):
        n = spec.test_per_class
        test_x.append(test_means[k] + spec.cluster_spread * rng.standard_normal((n, D)))
        test_y.append(np.full(n, k))

    train = FeatureDataset(np.concatenate(train_x).astype(np.float32), np.concatenate(train_y), K)
    test = FeatureDataset(np.concatenate(test_x).astype(np.float32), np.concatenate(test_y), K)
    return train, test


def write_features(dataset, path):
    """Write ``dataset`` as a little-endian DCRF file (features stored as float32)."""
    n, d = dataset.features.shape
    header = _DCRF_HEADER.pack(DCRF_MAGIC, DCRF_VERSION, n, d, dataset.num_classes)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(dataset.labels.astype("<u4").tobytes())
        fh.write(np.ascontiguousarray(dataset.features, dtype="<f4").tobytes())


def read_features(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 4 or blob[:4] != DCRF_MAGIC:
        raise BadMagicError(f"{path}: not a DCRF file (magic {blob[:4]!r})")
    if len(blob) < _DCRF_HEADER.size:
        raise TruncatedFileError(f"{path}: header truncated")
    _, version, n, d, k = _DCRF_HEADER.unpack_from(blob)
    if version != DCRF_VERSION:
        raise VersionMismatchError(f"{path}: version {version}, expected {DCRF_VERSION}")
    expected = _DCRF_HEADER.size + 4 * n + 4 * n * d
    if len(blob) < expected:
        raise TruncatedFileError(f"{path}: expected {expected} bytes for N={n}, D={d}, got {len(blob)}")
    if len(blob) > expected:
        raise DcrfError(f"{path}: {len(blob) - expected} trailing bytes after payload")
    offset = _DCRF_HEADER.size
    labels = np.frombuffer(blob, dtype="<u4", count=n, offset=offset)
    if n and labels.max() >= k:
        raise LabelRangeError(f"{path}: label {int(labels.max())} >= K={k}")
    features = np.frombuffer(blob, dtype="<f4", count=n * d, offset=offset + 4 * n)
    return FeatureDataset(features.reshape(n, d).astype(np.float32), labels.astype(np.int64), k)


def read_features_csv(path, num_classes=None):
    """Import a CSV with header ``label,f0,...,f{D-1}``."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if not header or header[0].strip() != "label":
            raise ValueError(f"{path}: first column must be 'label'")
        expected = [f"f{i}" for i in range(len(header) - 1)]
        if [h.strip() for h in header[1:]] != expected:
            raise ValueError(f"{path}: feature columns must be named f0..f{len(header) - 2}")
        labels, rows = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ValueError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            labels.append(int(row[0]))
            rows.append([float(x) for x in row[1:]])
    labels = np.array(labels, dtype=np.int64)
    features = np.array(rows, dtype=np.float32).reshape(len(rows), len(header) - 1)
    if num_classes is None:
        num_classes = int(labels.max()) + 1 if labels.size else 1
    return FeatureDataset(features, labels, num_classes)


def load_features(path):
    """Dispatch on file extension: ``.csv`` goes through the CSV importer, anything else is DCRF."""
    if Path(path).suffix.lower() == ".csv":
        return read_features_csv(path)
    return read_features(path)


def _as_rng(seed, consumer):
    if isinstance(seed, np.random.Generator):
        return seed
    return derive_rng(seed, consumer)


def _make_batch(dataset, indices):
    return Batch(indices, dataset.features[indices], dataset.labels[indices])


class UniformSampler:
    """Endless stream of batches; every epoch is a fresh permutation of all indices."""

    def __init__(self, dataset, batch_size, seed=0):
        if batch_size < 1:
            raise ValueError("batch_size must be positive")
        if batch_size > len(dataset):
            raise ValueError(f"batch_size {batch_size} exceeds dataset size {len(dataset)}")
        self.dataset = dataset
        self.batch_size = batch_size
        self.rng = _as_rng(seed, "uniform_sampler")
        self._order = np.empty(0, dtype=np.int64)
        self._pos = 0

    @property
    def batches_per_epoch(self):
        return math.ceil(len(self.dataset) / self.batch_size)

    def __iter__(self):
        return self

    def __next__(self):
        if self._pos >= self._order.size:
            self._order = self.rng.permutation(len(self.dataset))
            self._pos = 0
        idx = self._order[self._pos:self._pos + self.batch_size]
        self._pos += self.batch_size
        return _make_batch(self.dataset, idx)


class ClassBalancedSampler:
    """Endless stream of batches drawn class-uniformly, then instance-uniformly (with replacement)."""

    def __init__(self, dataset, batch_size, seed=0):
        if batch_size < 1:
            raise ValueError("batch_size must be positive")
        if batch_size > len(dataset):
            raise ValueError(f"batch_size {batch_size} exceeds dataset size {len(dataset)}")
        empty = np.flatnonzero(dataset.class_counts == 0)
        if empty.size:
            raise ValueError(f"classes without samples cannot be balanced: {empty.tolist()}")
        self.dataset = dataset
        self.batch_size = batch_size
        self.rng = _as_rng(seed, "balanced_sampler")
        order = np.argsort(dataset.labels, kind="stable")
        self._by_class = order
        self._starts = np.concatenate([[0], np.cumsum(dataset.class_counts)[:-1]])

    def __iter__(self):
        return self

    def __next__(self):
        K = self.dataset.num_classes
        classes = self.rng.integers(0, K, size=self.batch_size)
        counts = self.dataset.class_counts[classes]
        offsets = np.floor(self.rng.random(self.batch_size) * counts).astype(np.int64)
        idx = self._by_class[self._starts[classes] + offsets]
        return _make_batch(self.dataset, idx)


def uniform_sampler(dataset, batch_size, seed=0):
    return UniformSampler(dataset, batch_size, seed)


def class_balanced_sampler(dataset, batch_size, seed=0):
    return ClassBalancedSampler(dataset, batch_size, seed)
