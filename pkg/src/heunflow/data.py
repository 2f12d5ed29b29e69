"""Dataset loaders (MNIST IDX, MIT-BIH beat CSV, synthetic sine) and batching."""

from __future__ import annotations

import gzip
import math
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import BadLabel, BadMagic, BadRowLength, CountMismatch, NonFiniteValue, TruncatedFile

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

ECG_SIGNAL_LENGTH = 187
ECG_CLASSES = ("N", "S", "V", "F", "Q")

MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}
ECG_FILES = ("mitbih_train.csv", "mitbih_test.csv")


@dataclass(frozen=True)
class LabeledDataset:
    features: np.ndarray  # (n_samples, n_features)
    labels: np.ndarray  # (n_samples,) int64
    n_classes: int

    def __post_init__(self):
        if self.features.ndim != 2 or self.features.shape[0] != self.labels.shape[0]:
            raise ValueError(
                f"features {self.features.shape} and labels {self.labels.shape} disagree"
            )
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise ValueError(f"labels outside [0, {self.n_classes})")
        if not np.isfinite(self.features).all():
            raise ValueError("features contain non-finite values")

    def __len__(self):
        return self.labels.shape[0]

    def subset(self, idx) -> "LabeledDataset":
        idx = np.asarray(idx, dtype=np.int64)
        return LabeledDataset(self.features[idx], self.labels[idx], self.n_classes)

    def class_counts(self):
        return np.bincount(self.labels, minlength=self.n_classes)


@dataclass(frozen=True)
class SequenceDataset:
    series: list  # [(inputs, targets)] with equal-length 1-D arrays
    times: np.ndarray | None = None

    def __post_init__(self):
        for x, y in self.series:
            if len(x) != len(y):
                raise ValueError("input and target sequences differ in length")


# ---------------------------------------------------------------- MNIST


def _open(path):
    path = Path(path)
    if path.suffix == ".gz":
        return gzip.open(path, "rb")
    return open(path, "rb")


def _read_idx(path, magic, n_dims):
    with _open(path) as fh:
        raw = fh.read()
    header = 4 + 4 * n_dims
    if len(raw) < 4:
        raise TruncatedFile(f"{path}: missing magic number")
    (found,) = struct.unpack(">I", raw[:4])
    if found != magic:
        raise BadMagic(f"{path}: magic 0x{found:08x}, expected 0x{magic:08x}")
    if len(raw) < header:
        raise TruncatedFile(f"{path}: header is truncated")
    dims = struct.unpack(f">{n_dims}I", raw[4:header])
    expected = math.prod(dims)
    body = raw[header:]
    if len(body) < expected:
        raise TruncatedFile(f"{path}: expected {expected} data bytes, found {len(body)}")
    return np.frombuffer(body, dtype=np.uint8, count=expected).reshape(dims)


def load_mnist_idx(images_path, labels_path) -> LabeledDataset:
    """Read an IDX image/label pair; pixels scaled to [0, 1], images flattened row-major."""
    images = _read_idx(images_path, IDX_IMAGES_MAGIC, 3)
    labels = _read_idx(labels_path, IDX_LABELS_MAGIC, 1)
    if images.shape[0] != labels.shape[0]:
        raise CountMismatch(f"{images.shape[0]} images but {labels.shape[0]} labels")
    features = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    labels = labels.astype(np.int64)
    if labels.size and labels.max() >= 10:
        raise BadLabel(f"MNIST label {labels.max()} outside [0, 10)")
    return LabeledDataset(features, labels, 10)


def write_idx(path, array, magic):
    """Write a uint8 array in IDX layout (used for fixtures and round trips)."""
    array = np.asarray(array, dtype=np.uint8)
    header = struct.pack(f">I{array.ndim}I", magic, *array.shape)
    opener = gzip.open if str(path).endswith(".gz") else open
    with opener(path, "wb") as fh:
        fh.write(header + array.tobytes())


def _find(root, name):
    for candidate in (name, name + ".gz", name.replace("-idx", ".idx")):
        p = Path(root) / candidate
        if p.exists():
            return p
    raise FileNotFoundError(f"{name} not found under {root}")


def load_mnist_dir(root, split="train") -> LabeledDataset:
    images, labels = MNIST_FILES[split]
    return load_mnist_idx(_find(root, images), _find(root, labels))


# ---------------------------------------------------------------- ECG


def load_ecg_csv(path, has_header=False) -> LabeledDataset:
    """Parse a preprocessed MIT-BIH beat CSV: 187 samples plus a class label per row.

    Signal values are validated, not rescaled.
    """
    rows, labels = [], []
    with open(path) as fh:
        if has_header:
            next(fh, None)
        for lineno, line in enumerate(fh, start=1 + int(has_header)):
            line = line.strip()
            if not line:
                continue
            fields = line.split(",")
            if len(fields) != ECG_SIGNAL_LENGTH + 1:
                raise BadRowLength(
                    f"{path}:{lineno}: {len(fields)} fields, expected {ECG_SIGNAL_LENGTH + 1}"
                )
            try:
                values = np.array(fields, dtype=np.float64)
            except ValueError as exc:
                raise NonFiniteValue(f"{path}:{lineno}: {exc}") from None
            if not np.isfinite(values).all():
                raise NonFiniteValue(f"{path}:{lineno}: non-finite value")
            label = values[-1]
            if label != int(label) or not 0 <= label < len(ECG_CLASSES):
                raise BadLabel(f"{path}:{lineno}: label {fields[-1]!r} not in 0..4")
            rows.append(values[:-1])
            labels.append(int(label))
    features = np.vstack(rows) if rows else np.zeros((0, ECG_SIGNAL_LENGTH))
    return LabeledDataset(features, np.asarray(labels, dtype=np.int64), len(ECG_CLASSES))


def load_ecg_dir(root) -> LabeledDataset:
    """Concatenate the train and test beat files found under ``root``."""
    parts = [load_ecg_csv(Path(root) / name) for name in ECG_FILES if (Path(root) / name).exists()]
    if not parts:
        raise FileNotFoundError(f"none of {ECG_FILES} found under {root}")
    return LabeledDataset(
        np.vstack([p.features for p in parts]),
        np.concatenate([p.labels for p in parts]),
        len(ECG_CLASSES),
    )


def default_data_dir():
    return os.environ.get("HEUNFLOW_DATA_DIR")


# ---------------------------------------------------------------- sine


def gen_sine(total_length=16 * math.pi, n_points=512) -> SequenceDataset:
    """Next-step pairs ``(sin t_i, sin t_{i+1})`` on a uniform grid over [0, total_length]."""
    if n_points < 2:
        raise ValueError("n_points must be >= 2")
    t = np.linspace(0.0, total_length, n_points)
    wave = np.sin(t)
    return SequenceDataset([(wave[:-1], wave[1:])], times=t)


# ---------------------------------------------------------------- batching and splits


def batch_iter(dataset: LabeledDataset, batch_size: int, seed: int, epoch: int = 0):
    """Yield shuffled ``(features, labels)`` batches; the last partial batch is kept."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    order = np.random.default_rng([seed, epoch]).permutation(len(dataset))
    for start in range(0, len(order), batch_size):
        idx = order[start:start + batch_size]
        yield dataset.features[idx], dataset.labels[idx]


def _stratified_take(labels, n_classes, fraction, rng):
    """Per-class counts via largest remainder so the total is ``round(fraction*n)``."""
    counts = np.bincount(labels, minlength=n_classes)
    exact = counts * fraction
    take = np.floor(exact).astype(np.int64)
    short = int(round(fraction * len(labels))) - int(take.sum())
    if short > 0:
        order = np.argsort(-(exact - take), kind="stable")
        take[order[:short]] += 1
    chosen = []
    for cls in range(n_classes):
        members = np.flatnonzero(labels == cls)
        chosen.append(rng.permutation(members)[: take[cls]])
    return np.sort(np.concatenate(chosen)) if chosen else np.zeros(0, dtype=np.int64)


def stratified_split(dataset: LabeledDataset, test_fraction: float, seed: int):
    """Split into ``(train, test)`` keeping class proportions within one sample."""
    if not 0.0 < test_fraction < 1.0:
        raise ValueError("test_fraction must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    test_idx = _stratified_take(dataset.labels, dataset.n_classes, test_fraction, rng)
    mask = np.ones(len(dataset), dtype=bool)
    mask[test_idx] = False
    return dataset.subset(np.flatnonzero(mask)), dataset.subset(test_idx)


def stratified_subset(dataset: LabeledDataset, n: int, seed: int) -> LabeledDataset:
    if n >= len(dataset):
        return dataset
    rng = np.random.default_rng(seed)
    return dataset.subset(_stratified_take(dataset.labels, dataset.n_classes, n / len(dataset), rng))
