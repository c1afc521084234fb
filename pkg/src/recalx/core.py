"""Shared data model: instances, datasets, subset masks, probability vectors,
deterministic RNG derivation, and the numeric primitives used everywhere else.

All types are immutable after construction and all functions are pure, so
everything here is safe to use from concurrent workers.
"""

from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

# Clamp applied by estimators that need strictly positive probabilities.
# Nothing is stored clamped; call sites opt in explicitly.
PROB_EPS = 1e-12


class RecalxError(Exception):
    """Base class for errors raised by this package."""


class DivergenceUndefinedError(RecalxError):
    """KL divergence requested for distributions violating absolute continuity."""


class InfeasibleBinError(RecalxError):
    """No subset size maps into the requested perturbation-level bin."""


class UndefinedMetricError(RecalxError):
    """Metric has no defined value for the given input (e.g. zero-variance ranks)."""


class ModelTransportError(RecalxError):
    """Failure talking to an external model process."""

    def __init__(self, message: str, request_id: int | None = None):
        super().__init__(message)
        self.request_id = request_id


class ProtocolError(ModelTransportError):
    """External model process violated the wire protocol."""


def as_instance(values: Sequence[float] | np.ndarray, feature_count: int | None = None) -> np.ndarray:
    """Coerce to a finite 1-D float64 feature vector."""
    x = np.asarray(values, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError(f"instance must be 1-D, got shape {x.shape}")
    if feature_count is not None and x.shape[0] != feature_count:
        raise ValueError(f"instance has {x.shape[0]} features, expected {feature_count}")
    if not np.all(np.isfinite(x)):
        raise ValueError("instance contains non-finite values")
    return x


def as_batch(values: Sequence[Sequence[float]] | np.ndarray, feature_count: int | None = None) -> np.ndarray:
    """Coerce to a finite 2-D (n, d) float64 batch."""
    x = np.asarray(values, dtype=np.float64)
    if x.ndim == 1:
        x = x.reshape(1, -1)
    if x.ndim != 2:
        raise ValueError(f"batch must be 2-D, got shape {x.shape}")
    if feature_count is not None and x.shape[1] != feature_count:
        raise ValueError(f"batch has {x.shape[1]} features, expected {feature_count}")
    if not np.all(np.isfinite(x)):
        raise ValueError("batch contains non-finite values")
    return x


@dataclass(frozen=True)
class Dataset:
    """Labeled instances with d features and K classes.

    ``X`` has shape (n, d) and ``y`` holds class indices in {0..K-1}.
    """

    X: np.ndarray
    y: np.ndarray
    class_count: int

    def __post_init__(self):
        X = np.asarray(self.X, dtype=np.float64)
        y = np.asarray(self.y, dtype=np.int64)
        if X.ndim != 2:
            raise ValueError("X must be 2-D")
        if y.ndim != 1 or y.shape[0] != X.shape[0]:
            raise ValueError("y must be 1-D with one label per instance")
        if X.shape[1] < 1:
            raise ValueError("need at least one feature")
        if self.class_count < 2:
            raise ValueError("need at least two classes")
        if not np.all(np.isfinite(X)):
            raise ValueError("X contains non-finite values")
        if y.size and (y.min() < 0 or y.max() >= self.class_count):
            raise ValueError("labels must lie in {0..K-1}")
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def feature_count(self) -> int:
        return self.X.shape[1]


@dataclass(frozen=True)
class SubsetMask:
    """Which of ``size`` units are observed; the complement gets perturbed.

    Bit i of ``bits`` set means unit i is observed, so masks enumerate in
    plain binary-counter order.
    """

    size: int
    bits: int

    def __post_init__(self):
        if self.size < 0:
            raise ValueError("mask size must be nonnegative")
        if self.bits < 0 or self.bits >= (1 << self.size):
            raise ValueError("mask bits out of range for size")

    @classmethod
    def from_indices(cls, size: int, observed: Iterable[int]) -> "SubsetMask":
        bits = 0
        for i in observed:
            if not 0 <= i < size:
                raise ValueError(f"unit index {i} out of range")
            bits |= 1 << i
        return cls(size, bits)

    @classmethod
    def from_bools(cls, observed: Sequence[bool] | np.ndarray) -> "SubsetMask":
        arr = np.asarray(observed, dtype=bool)
        bits = 0
        for i in np.flatnonzero(arr):
            bits |= 1 << int(i)
        return cls(int(arr.shape[0]), bits)

    @classmethod
    def full(cls, size: int) -> "SubsetMask":
        return cls(size, (1 << size) - 1)

    @classmethod
    def empty(cls, size: int) -> "SubsetMask":
        return cls(size, 0)

    def observed_count(self) -> int:
        return self.bits.bit_count()

    def observed_indices(self) -> list[int]:
        return [i for i in range(self.size) if self.bits >> i & 1]

    def contains(self, unit: int) -> bool:
        return bool(self.bits >> unit & 1)

    def complement(self) -> "SubsetMask":
        return SubsetMask(self.size, ((1 << self.size) - 1) ^ self.bits)

    def with_unit(self, unit: int) -> "SubsetMask":
        return SubsetMask(self.size, self.bits | (1 << unit))

    def to_bool_array(self) -> np.ndarray:
        return np.array([(self.bits >> i) & 1 for i in range(self.size)], dtype=bool)

    def __str__(self) -> str:
        return "".join("1" if self.bits >> i & 1 else "0" for i in range(self.size))


def _label_key(label: str) -> int:
    # Stable across processes (never the built-in hash, which is salted).
    digest = hashlib.sha256(label.encode("utf-8")).digest()
    return int.from_bytes(digest[:4], "little")


@dataclass(frozen=True)
class SeedSpec:
    """Master seed plus a derivation path of (label, index) steps.

    Identical (master_seed, path) pairs always yield identical random
    streams; distinct paths yield statistically independent streams.
    """

    master_seed: int
    path: tuple[tuple[str, int], ...] = ()

    def child(self, label: str, index: int = 0) -> "SeedSpec":
        return SeedSpec(self.master_seed, self.path + ((label, int(index)),))

    def generator(self) -> np.random.Generator:
        spawn_key = []
        for label, index in self.path:
            spawn_key.append(_label_key(label))
            spawn_key.append(index)
        seq = np.random.SeedSequence(self.master_seed, spawn_key=tuple(spawn_key))
        return np.random.Generator(np.random.PCG64(seq))


def derive_rng(seed: SeedSpec, label: str, index: int = 0) -> np.random.Generator:
    """Reproducible random stream for one (label, index) branch of ``seed``."""
    return seed.child(label, index).generator()


def softmax(logits: np.ndarray) -> np.ndarray:
    """Stable softmax along the last axis; rejects non-finite input."""
    z = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise ValueError("softmax requires finite logits")
    shifted = z - np.max(z, axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=-1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise ValueError("log_softmax requires finite logits")
    shifted = z - np.max(z, axis=-1, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True))


def validate_prob_vector(p: np.ndarray, atol: float = 1e-9) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 1:
        raise ValueError("probability vector must be 1-D")
    if np.any(p < 0) or np.any(p > 1):
        raise ValueError("probabilities must lie in [0, 1]")
    if abs(float(p.sum()) - 1.0) > atol:
        raise ValueError(f"probabilities sum to {p.sum()}, expected 1")
    return p


def kl_divergence(p: np.ndarray, q: np.ndarray) -> float:
    """KL(p || q) in nats with the 0 * log 0 = 0 convention.

    Raises DivergenceUndefinedError when q puts zero mass where p does not.
    """
    p = validate_prob_vector(p)
    q = validate_prob_vector(q)
    if p.shape != q.shape:
        raise ValueError("distributions must have equal length")
    support = p > 0
    if np.any(q[support] == 0):
        raise DivergenceUndefinedError("q must be positive wherever p is positive")
    val = float(np.sum(p[support] * np.log(p[support] / q[support])))
    return max(val, 0.0)


def argmax_class(values: np.ndarray) -> int:
    """Index of the largest entry, ties broken by lowest index."""
    return int(np.argmax(values))


def load_dataset_csv(path: str | Path, class_count: int | None = None) -> Dataset:
    """Read a dataset CSV: header row, one integer ``label`` column, remaining
    columns numeric features in declared order. Strict: any non-numeric cell
    raises with its row and column."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        if "label" not in header:
            raise ValueError(f"{path}: no 'label' column in header")
        label_col = header.index("label")
        feature_cols = [i for i in range(len(header)) if i != label_col]
        rows, labels = [], []
        for row_num, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise ValueError(f"{path}: row {row_num} has {len(row)} cells, expected {len(header)}")
            try:
                labels.append(int(row[label_col]))
            except ValueError:
                raise ValueError(
                    f"{path}: row {row_num}, column '{header[label_col]}': not an integer label"
                ) from None
            feats = []
            for i in feature_cols:
                try:
                    feats.append(float(row[i]))
                except ValueError:
                    raise ValueError(
                        f"{path}: row {row_num}, column '{header[i]}': not numeric"
                    ) from None
            rows.append(feats)
    if not rows:
        raise ValueError(f"{path}: no data rows")
    y = np.array(labels, dtype=np.int64)
    if class_count is None:
        class_count = int(y.max()) + 1 if y.size else 2
        class_count = max(class_count, 2)
    return Dataset(np.array(rows, dtype=np.float64), y, class_count)


def save_dataset_csv(path: str | Path, dataset: Dataset) -> None:
    """Write a dataset in the CSV format read by :func:`load_dataset_csv`."""
    path = Path(path)
    d = dataset.feature_count
    lines = ["label," + ",".join(f"f{i}" for i in range(d))]
    for i in range(dataset.n):
        feats = ",".join(repr(float(v)) for v in dataset.X[i])
        lines.append(f"{int(dataset.y[i])},{feats}")
    path.write_text("\n".join(lines) + "\n")
