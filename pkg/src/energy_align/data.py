"""Datasets: synthetic Gaussian mixtures, long-tail subsampling, file I/O."""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path

import numpy as np

from .errors import ContractError, ParseError
from .numerics import LogitMatrix


@dataclass(frozen=True)
class LabeledDataset:
    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    split: str = "train"

    def __post_init__(self):
        x = np.asarray(self.features, dtype=np.float64)
        y = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if x.ndim != 2 or x.shape[0] != y.shape[0]:
            raise ContractError(f"features {x.shape} and labels {y.shape} disagree")
        if y.size and (y.min() < 0 or y.max() >= self.num_classes):
            raise ContractError("label out of range")
        if not np.isfinite(x).all():
            raise ContractError("features must be finite")
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "labels", y)

    @property
    def counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes)

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def __len__(self) -> int:
        return self.labels.shape[0]

    def subset(self, index) -> LabeledDataset:
        index = np.asarray(index, dtype=np.int64)
        return LabeledDataset(self.features[index], self.labels[index], self.num_classes, self.split)

    def select_classes(self, classes) -> np.ndarray:
        """Row indices whose label is in ``classes``, in dataset order."""
        return np.flatnonzero(np.isin(self.labels, np.asarray(classes)))


def synth_gaussians(
    num_classes: int,
    dim: int,
    spread: float,
    sigma: float,
    n_per_class,
    seed: int,
    split: str = "train",
) -> LabeledDataset:
    """Isotropic Gaussian blobs with standard deviation ``sigma``.

    Class means point in seeded uniformly random directions at distance
    ``spread`` from the origin, so no class is favoured by geometry alone.
    """
    counts = np.broadcast_to(np.asarray(n_per_class, dtype=np.int64), (num_classes,))
    if num_classes < 1 or dim < 1:
        raise ContractError("need at least one class and one dimension")
    if counts.min() < 1:
        raise ContractError("every class needs at least one sample")
    rng = np.random.default_rng(seed)
    means = rng.standard_normal((num_classes, dim))
    means *= spread / np.linalg.norm(means, axis=1, keepdims=True)
    xs, ys = [], []
    for c in range(num_classes):
        xs.append(means[c] + sigma * rng.standard_normal((counts[c], dim)))
        ys.append(np.full(counts[c], c))
    return LabeledDataset(np.vstack(xs), np.concatenate(ys), num_classes, split)


def balanced_holdout(dataset: LabeledDataset, per_class: int, seed: int):
    """Split off ``per_class`` random rows of every class as a balanced test set."""
    rng = np.random.default_rng(seed)
    test_idx = []
    for c in range(dataset.num_classes):
        rows = np.flatnonzero(dataset.labels == c)
        if rows.size <= per_class:
            raise ContractError(f"class {c} has {rows.size} rows, cannot hold out {per_class}")
        test_idx.append(np.sort(rng.choice(rows, per_class, replace=False)))
    test_idx = np.concatenate(test_idx)
    keep = np.setdiff1d(np.arange(len(dataset)), test_idx)
    train = LabeledDataset(dataset.features[keep], dataset.labels[keep], dataset.num_classes, "train")
    test = LabeledDataset(dataset.features[test_idx], dataset.labels[test_idx], dataset.num_classes, "test")
    return train, test


def _round_half_up(v: float) -> int:
    return int(Decimal(repr(v)).quantize(Decimal(1), rounding=ROUND_HALF_UP))


def long_tail_profile(n_max: int, num_classes: int, ratio: float) -> np.ndarray:
    """Exponential counts ``n_c = round(n_max * ratio**(-c/(C-1)))``, at least 1."""
    if ratio < 1:
        raise ContractError("imbalance ratio must be >= 1")
    if num_classes == 1:
        return np.array([n_max])
    c = np.arange(num_classes)
    raw = n_max * ratio ** (-c / (num_classes - 1))
    return np.array([max(1, _round_half_up(float(v))) for v in raw], dtype=np.int64)


def make_long_tailed(dataset: LabeledDataset, ratio: float, seed: int) -> LabeledDataset:
    """Uniformly subsample class ``c`` down to the exponential long-tail profile.

    ``ratio`` is most-frequent over least-frequent count. Class 0 is the head.
    """
    if ratio < 1:
        raise ContractError("imbalance ratio must be >= 1")
    counts = dataset.counts
    if ratio == 1:
        return dataset
    n_max = int(counts.max())
    target = long_tail_profile(n_max, dataset.num_classes, ratio)
    if (target > counts).any():
        raise ContractError("balanced input needed: some class is smaller than its target count")
    rng = np.random.default_rng(seed)
    keep = []
    for c in range(dataset.num_classes):
        rows = np.flatnonzero(dataset.labels == c)
        keep.append(np.sort(rng.choice(rows, target[c], replace=False)))
    return dataset.subset(np.concatenate(keep))


def make_incremental_splits(num_classes: int, steps: int, seed: int, classes_per_step: int | None = None):
    """Shuffle class ids with ``seed`` and cut them into equal, disjoint groups."""
    if steps < 1:
        raise ContractError("need at least one step")
    if classes_per_step is None:
        if num_classes % steps:
            raise ContractError(f"{num_classes} classes do not divide into {steps} steps")
        classes_per_step = num_classes // steps
    if classes_per_step * steps != num_classes:
        raise ContractError(
            f"{steps} steps of {classes_per_step} classes do not cover {num_classes} classes"
        )
    order = np.random.default_rng(seed).permutation(num_classes)
    return [np.sort(order[k * classes_per_step : (k + 1) * classes_per_step]) for k in range(steps)]


# --- CSV datasets -------------------------------------------------------------


def save_csv_dataset(dataset: LabeledDataset, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([f"f{i}" for i in range(dataset.dim)] + ["label"])
        for row, label in zip(dataset.features, dataset.labels):
            w.writerow([repr(float(v)) for v in row] + [int(label)])


def load_csv_dataset(path, num_classes: int | None = None) -> LabeledDataset:
    """Read ``f0,...,f{D-1},label`` rows. ``num_classes`` defaults to max label + 1."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ParseError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    dim = len(header) - 1
    if dim < 1 or header[-1] != "label" or header[:-1] != [f"f{i}" for i in range(dim)]:
        raise ParseError(f"{path}: header must be f0,...,f{{D-1}},label")
    body = [r for r in rows[1:] if r]
    if not body:
        raise ParseError(f"{path}: no data rows")
    feats = np.empty((len(body), dim))
    labels = np.empty(len(body), dtype=np.int64)
    for i, r in enumerate(body, start=2):
        if len(r) != dim + 1:
            raise ParseError(f"{path}:{i}: expected {dim + 1} fields, got {len(r)}")
        try:
            feats[i - 2] = [float(v) for v in r[:-1]]
            labels[i - 2] = int(r[-1])
        except ValueError as exc:
            raise ParseError(f"{path}:{i}: {exc}") from exc
        if not np.isfinite(feats[i - 2]).all():
            raise ParseError(f"{path}:{i}: non-finite feature")
    if labels.min() < 0:
        raise ParseError(f"{path}: negative label")
    c = int(labels.max()) + 1 if num_classes is None else num_classes
    if labels.max() >= c:
        raise ParseError(f"{path}: label {labels.max()} out of range [0, {c})")
    return LabeledDataset(feats, labels, c, "train")


# --- EALG logit binary -----------------------------------------------------------
# magic "EALG" | u32 version=1 | u64 S | u64 C | u8 flags | S*C float32 LE | [S int64 LE labels]

_MAGIC = b"EALG"
_VERSION = 1
_HEADER = struct.Struct("<4sIQQB")
_FLAG_LABELS = 0x01


def save_logit_file(path, logits, labels=None) -> None:
    values = np.asarray(logits, dtype="<f4")
    if values.ndim != 2:
        raise ContractError("logits must be a 2-D matrix")
    s, c = values.shape
    flags = _FLAG_LABELS if labels is not None else 0
    parts = [_HEADER.pack(_MAGIC, _VERSION, s, c, flags), values.tobytes()]
    if labels is not None:
        lab = np.asarray(labels, dtype="<i8").reshape(-1)
        if lab.shape[0] != s:
            raise ContractError("one label per logit row required")
        parts.append(lab.tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_logit_file(path) -> LogitMatrix:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise ParseError(f"{path}: truncated header")
    magic, version, s, c, flags = _HEADER.unpack_from(data)
    if magic != _MAGIC:
        raise ParseError(f"{path}: bad magic {magic!r}")
    if version != _VERSION:
        raise ParseError(f"{path}: unsupported version {version}")
    body = s * c * 4
    want = _HEADER.size + body + (s * 8 if flags & _FLAG_LABELS else 0)
    if len(data) != want:
        raise ParseError(f"{path}: expected {want} bytes, found {len(data)}")
    values = np.frombuffer(data, dtype="<f4", count=s * c, offset=_HEADER.size)
    values = values.astype(np.float64).reshape(s, c)
    if not np.isfinite(values).all():
        raise ParseError(f"{path}: non-finite logits")
    labels = None
    if flags & _FLAG_LABELS:
        labels = np.frombuffer(data, dtype="<i8", count=s, offset=_HEADER.size + body).astype(np.int64)
        if labels.size and (labels.min() < 0 or labels.max() >= c):
            raise ParseError(f"{path}: label out of range [0, {c})")
    try:
        return LogitMatrix(values, labels)
    except ContractError as exc:
        raise ParseError(f"{path}: {exc}") from exc


def load_int_list(path) -> np.ndarray:
    """Integers separated by commas, whitespace or newlines (also a JSON list)."""
    text = Path(path).read_text().strip()
    if text.startswith("["):
        text = text.strip("[]")
    tokens = [t for t in text.replace(",", " ").split() if t]
    if not tokens:
        raise ParseError(f"{path}: empty integer list")
    try:
        return np.array([int(t) for t in tokens], dtype=np.int64)
    except ValueError as exc:
        raise ParseError(f"{path}: {exc}") from exc
