import os
from pathlib import Path

import numpy as np
import pytest

from heunflow import data

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def _blob_images(rng, labels, side=28):
    """Digit-like fixtures: each class lights a different horizontal band."""
    imgs = rng.integers(0, 40, size=(len(labels), side, side)).astype(np.uint8)
    band = side // 10
    for k, y in enumerate(labels):
        imgs[k, y * band:(y + 1) * band + 2, :] = 230
    return imgs


@pytest.fixture(scope="session")
def mnist_dir(tmp_path_factory):
    """Tiny IDX dataset with the real file names and layout."""
    root = tmp_path_factory.mktemp("mnist")
    rng = np.random.default_rng(7)
    for split, n in (("train", 300), ("test", 100)):
        labels = np.arange(n) % 10
        rng.shuffle(labels)
        images_name, labels_name = data.MNIST_FILES[split]
        data.write_idx(root / images_name, _blob_images(rng, labels), data.IDX_IMAGES_MAGIC)
        data.write_idx(root / labels_name, labels, data.IDX_LABELS_MAGIC)
    return root


def ecg_rows(rng, n):
    labels = np.arange(n) % 5
    t = np.linspace(0, 1, data.ECG_SIGNAL_LENGTH)
    rows = []
    for y in labels:
        beat = 0.5 + 0.4 * np.sin(2 * np.pi * (y + 1) * t) * np.exp(-3 * t)
        beat = np.clip(beat + 0.02 * rng.standard_normal(t.size), 0, 1)
        rows.append(list(beat) + [float(y)])
    return rows


def write_ecg_csv(path, rows):
    with open(path, "w") as fh:
        for row in rows:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


@pytest.fixture(scope="session")
def ecg_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("ecg")
    rng = np.random.default_rng(11)
    write_ecg_csv(root / "mitbih_train.csv", ecg_rows(rng, 200))
    write_ecg_csv(root / "mitbih_test.csv", ecg_rows(rng, 50))
    return root


def real_data_dir():
    root = os.environ.get("HEUNFLOW_DATA_DIR")
    return Path(root) if root else None
