import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from heunflow import data
from heunflow.errors import (
    BadLabel,
    BadMagic,
    BadRowLength,
    CountMismatch,
    NonFiniteValue,
    TruncatedFile,
)

from conftest import ecg_rows, real_data_dir, write_ecg_csv


def _write_pair(tmp_path, images, labels, suffix=""):
    ip, lp = tmp_path / f"img{suffix}", tmp_path / f"lab{suffix}"
    data.write_idx(ip, images, data.IDX_IMAGES_MAGIC)
    data.write_idx(lp, labels, data.IDX_LABELS_MAGIC)
    return ip, lp


@pytest.mark.parametrize("suffix", ["", ".gz"])
def test_idx_round_trip(tmp_path, rng, suffix):
    images = rng.integers(0, 256, size=(5, 28, 28), dtype=np.uint8)
    labels = np.array([3, 1, 4, 1, 5], dtype=np.uint8)
    ds = data.load_mnist_idx(*_write_pair(tmp_path, images, labels, suffix))
    assert ds.features.shape == (5, 784) and ds.labels.tolist() == [3, 1, 4, 1, 5]
    assert np.array_equal(np.round(ds.features * 255).astype(np.uint8), images.reshape(5, -1))
    assert ds.features.min() >= 0.0 and ds.features.max() <= 1.0


def test_idx_bad_magic(tmp_path):
    ip, lp = _write_pair(tmp_path, np.zeros((1, 2, 2)), np.zeros(1))
    data.write_idx(ip, np.zeros((1, 2, 2)), 0x00000801)
    with pytest.raises(BadMagic):
        data.load_mnist_idx(ip, lp)


def test_idx_truncated(tmp_path):
    ip, lp = _write_pair(tmp_path, np.zeros((2, 4, 4)), np.zeros(2))
    ip.write_bytes(ip.read_bytes()[:-5])
    with pytest.raises(TruncatedFile):
        data.load_mnist_idx(ip, lp)
    ip.write_bytes(ip.read_bytes()[:9])
    with pytest.raises(TruncatedFile):
        data.load_mnist_idx(ip, lp)


def test_idx_count_mismatch(tmp_path):
    ip, lp = _write_pair(tmp_path, np.zeros((3, 2, 2)), np.zeros(2))
    with pytest.raises(CountMismatch):
        data.load_mnist_idx(ip, lp)


def test_mnist_dir_layout(mnist_dir):
    train = data.load_mnist_dir(mnist_dir, "train")
    test = data.load_mnist_dir(mnist_dir, "test")
    assert train.features.shape == (300, 784) and test.features.shape == (100, 784)
    assert train.n_classes == 10


def test_real_mnist_if_present():
    root = real_data_dir()
    if root is None or not (root / "train-images-idx3-ubyte").exists() and \
            not (root / "train-images-idx3-ubyte.gz").exists():
        pytest.skip("HEUNFLOW_DATA_DIR does not hold MNIST")
    ds = data.load_mnist_dir(root, "train")
    assert ds.features.shape == (60000, 784)


def test_ecg_csv(tmp_path, rng):
    path = tmp_path / "beats.csv"
    write_ecg_csv(path, ecg_rows(rng, 10))
    ds = data.load_ecg_csv(path)
    assert ds.features.shape == (10, 187) and ds.n_classes == 5
    assert ds.labels.tolist() == [0, 1, 2, 3, 4] * 2


def test_ecg_header_row(tmp_path, rng):
    path = tmp_path / "beats.csv"
    rows = ecg_rows(rng, 3)
    with open(path, "w") as fh:
        fh.write(",".join(f"c{k}" for k in range(188)) + "\n")
        fh.write("\n".join(",".join(repr(float(v)) for v in r) for r in rows) + "\n")
    assert len(data.load_ecg_csv(path, has_header=True)) == 3


@pytest.mark.parametrize("mutate,error", [
    (lambda r: r[:-2] + r[-1:], BadRowLength),
    (lambda r: r[:-1] + [7.0], BadLabel),
    (lambda r: r[:-1] + [1.5], BadLabel),
    (lambda r: [float("nan")] + r[1:], NonFiniteValue),
    (lambda r: ["abc"] + r[1:], NonFiniteValue),
])
def test_ecg_malformed_rows(tmp_path, rng, mutate, error):
    rows = ecg_rows(rng, 3)
    rows[1] = mutate(list(rows[1]))
    path = tmp_path / "bad.csv"
    with open(path, "w") as fh:
        for r in rows:
            fh.write(",".join(str(v) for v in r) + "\n")
    with pytest.raises(error) as info:
        data.load_ecg_csv(path)
    assert ":2:" in str(info.value)


def test_ecg_dir_pools_files(ecg_dir):
    assert len(data.load_ecg_dir(ecg_dir)) == 250


def test_missing_files(tmp_path):
    with pytest.raises(FileNotFoundError):
        data.load_ecg_dir(tmp_path)
    with pytest.raises(FileNotFoundError):
        data.load_mnist_dir(tmp_path)


def test_gen_sine_examples():
    ds = data.gen_sine(2 * math.pi, 3)
    x, y = ds.series[0]
    assert np.allclose(x, [0.0, 0.0], atol=1e-15) and np.allclose(y, [0.0, 0.0], atol=1e-15)
    ds = data.gen_sine(math.pi / 2, 2)
    x, y = ds.series[0]
    assert x.tolist() == [0.0] and y.tolist() == [1.0]
    with pytest.raises(ValueError):
        data.gen_sine(1.0, 1)


def test_gen_sine_default_grid():
    ds = data.gen_sine()
    x, y = ds.series[0]
    assert len(x) == 511 and ds.times[-1] == pytest.approx(16 * math.pi)
    assert np.array_equal(x[1:], y[:-1])


def _toy(n, n_classes=3, seed=0):
    rng = np.random.default_rng(seed)
    labels = np.arange(n) % n_classes
    return data.LabeledDataset(rng.normal(size=(n, 2)), labels.astype(np.int64), n_classes)


@settings(max_examples=50, deadline=None)
@given(n=st.integers(1, 60), bs=st.integers(1, 20), seed=st.integers(0, 1000))
def test_batch_iter_partitions(n, bs, seed):
    ds = _toy(n)
    batches = list(data.batch_iter(ds, bs, seed))
    assert len(batches) == math.ceil(n / bs)
    assert all(len(b[1]) == bs for b in batches[:-1])
    seen = np.concatenate([b[0] for b in batches])
    assert sorted(map(tuple, seen)) == sorted(map(tuple, ds.features))


def test_batch_iter_examples_and_determinism():
    ds = _toy(10)
    assert [len(y) for _, y in data.batch_iter(ds, 3, 0)] == [3, 3, 3, 1]
    a = [y.tolist() for _, y in data.batch_iter(ds, 4, 7, epoch=2)]
    b = [y.tolist() for _, y in data.batch_iter(ds, 4, 7, epoch=2)]
    c = [x.tolist() for x, _ in data.batch_iter(ds, 10, 7, epoch=3)]
    assert a == b and c != [x.tolist() for x, _ in data.batch_iter(ds, 10, 7, epoch=2)]
    with pytest.raises(ValueError):
        next(data.batch_iter(ds, 0, 0))


@settings(max_examples=50, deadline=None)
@given(counts=st.lists(st.integers(1, 40), min_size=2, max_size=5),
       frac=st.floats(0.05, 0.95), seed=st.integers(0, 1000))
def test_stratified_split_proportions(counts, frac, seed):
    labels = np.concatenate([np.full(c, k) for k, c in enumerate(counts)]).astype(np.int64)
    ds = data.LabeledDataset(np.arange(len(labels), dtype=float)[:, None], labels, len(counts))
    train, test = data.stratified_split(ds, frac, seed)
    assert len(train) + len(test) == len(ds)
    assert len(test) == round(frac * len(ds))
    assert np.all(np.abs(test.class_counts() - np.asarray(counts) * frac) <= 1.0)
    together = np.sort(np.concatenate([train.features[:, 0], test.features[:, 0]]))
    assert np.array_equal(together, np.arange(len(ds)))


def test_stratified_split_deterministic():
    ds = _toy(90)
    a = data.stratified_split(ds, 0.2, 5)[1].features
    b = data.stratified_split(ds, 0.2, 5)[1].features
    assert np.array_equal(a, b)
    assert data.stratified_split(ds, 0.2, 5)[1].class_counts().tolist() == [6, 6, 6]


def test_stratified_subset():
    ds = _toy(100, n_classes=4)
    sub = data.stratified_subset(ds, 40, 1)
    assert len(sub) == 40 and sub.class_counts().tolist() == [10, 10, 10, 10]
    assert data.stratified_subset(ds, 500, 1) is ds


def test_dataset_validation():
    with pytest.raises(ValueError):
        data.LabeledDataset(np.zeros((2, 2)), np.array([0, 5]), 3)
    with pytest.raises(ValueError):
        data.LabeledDataset(np.zeros((2, 2)), np.array([0]), 3)
