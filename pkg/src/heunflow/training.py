"""Optimizers, models, training loops and metric records."""

from __future__ import annotations

import csv
import dataclasses
import math
import time
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from . import autodiff as ad
from . import blocks, recurrent
from .autodiff import Parameter, Tape, Tensor
from .data import LabeledDataset, SequenceDataset, batch_iter
from .errors import NonFiniteLoss, check_alpha

METRICS_HEADER = ("iteration", "train_loss", "eval_loss", "eval_accuracy", "wall_time_s")
MODELS = ("blocks", "lstm", "gru")
SEQUENCE_MODELS = ("lstm", "resnet", "heun", "extheun")


# ---------------------------------------------------------------- optimizers


class SGD:
    def __init__(self, lr=1e-2, momentum=0.0):
        if lr <= 0:
            raise ValueError("lr must be positive")
        self.lr, self.momentum = lr, momentum
        self.velocity: dict[Parameter, np.ndarray] = {}

    def step(self, params: Iterable[Parameter]):
        for p in params:
            g = p.grad
            if self.momentum:
                v = self.velocity.get(p)
                v = g.copy() if v is None else self.momentum * v + g
                self.velocity[p] = v
                g = v
            p.value -= self.lr * g


class Adam:
    """Adam with bias-corrected first and second moments."""

    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        if lr <= 0:
            raise ValueError("lr must be positive")
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m: dict[Parameter, np.ndarray] = {}
        self.v: dict[Parameter, np.ndarray] = {}

    def step(self, params: Iterable[Parameter]):
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p in params:
            g = p.grad
            m = self.beta1 * self.m.get(p, 0.0) + (1.0 - self.beta1) * g
            v = self.beta2 * self.v.get(p, 0.0) + (1.0 - self.beta2) * g * g
            self.m[p], self.v[p] = m, v
            p.value -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def sgd_step(params, lr=1e-2, momentum=0.0, state=None):
    """Functional form of :class:`SGD`; returns the optimizer to reuse as state."""
    opt = state or SGD(lr, momentum)
    opt.step(params)
    return opt


def adam_step(params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8, state=None):
    opt = state or Adam(lr, beta1, beta2, eps)
    opt.step(params)
    return opt


# ---------------------------------------------------------------- configuration


@dataclass
class TrainConfig:
    model: str = "blocks"
    family: str = "heun"
    alpha: float | None = None
    depth: int = 3
    hidden: int = 128
    share_weights: bool = True
    activation: str = "tanh"
    optimizer: str = "adam"
    lr: float = 1e-3
    momentum: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    epochs: int = 10
    batch_size: int = 64
    seed: int = 0
    loss: str = "softmax_cross_entropy"
    sequence_steps: int = 28  # recurrent classifiers: rows fed per time step
    window: int = 32  # sequence task: training window length
    window_stride: int = 1
    seed_steps: int = 32  # sequence task: true values fed before free running
    eval_fraction: float = 0.25
    record_wall_time: bool = False

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.family not in blocks.FAMILIES and self.family not in SEQUENCE_MODELS:
            raise ValueError(f"unknown family {self.family!r}")
        if self.family == "extheun":
            if self.alpha is None:
                raise ValueError("family extheun needs alpha")
            check_alpha(self.alpha)

    def make_optimizer(self):
        if self.optimizer == "adam":
            return Adam(self.lr, self.beta1, self.beta2, self.eps)
        return SGD(self.lr, self.momentum)

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in dataclasses.fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


# ---------------------------------------------------------------- metrics


@dataclass
class MetricsRecord:
    iteration: int
    train_loss: float
    eval_loss: float
    eval_accuracy: float
    wall_time_s: float = 0.0


@dataclass
class MetricsHistory:
    records: list[MetricsRecord] = field(default_factory=list)

    def append(self, record: MetricsRecord):
        if self.records and record.iteration <= self.records[-1].iteration:
            raise ValueError("iterations must increase")
        if not 0.0 <= record.eval_accuracy <= 1.0:
            raise ValueError("accuracy outside [0, 1]")
        self.records.append(record)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def column(self, name):
        return [getattr(r, name) for r in self.records]

    def best(self):
        """Record with the highest accuracy (earliest on ties)."""
        return max(self.records, key=lambda r: (r.eval_accuracy, -r.iteration))

    def to_rows(self):
        return [
            [str(r.iteration)] + [f"{getattr(r, k):.9g}" for k in METRICS_HEADER[1:]]
            for r in self.records
        ]

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(METRICS_HEADER)
            w.writerows(self.to_rows())


# ---------------------------------------------------------------- models


def _uniform(rng, fan_in, shape):
    s = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-s, s, size=shape)


class BlockClassifier:
    """Input projection, a stack of residual blocks, and a linear readout.

    Inputs are ``(n_features, B)`` columns; output logits are ``(n_classes, B)``.
    """

    def __init__(self, n_features, n_classes, spec: blocks.BlockSpec, hidden=128,
                 activation="tanh", rng=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.spec = spec
        self.activation = activation
        self.W_in = Parameter("W_in", _uniform(rng, n_features, (hidden, n_features)))
        self.b_in = Parameter("b_in", np.zeros((hidden, 1)))
        n_maps = 1 if spec.share_weights else spec.depth
        self.maps = [
            blocks.DenseMap.init(hidden, rng, activation, name=f"W_block{k}") for k in range(n_maps)
        ]
        self.W_out = Parameter("W_out", _uniform(rng, hidden, (n_classes, hidden)))
        self.b_out = Parameter("b_out", np.zeros((n_classes, 1)))

    @property
    def parameters(self):
        ps = [self.W_in, self.b_in]
        for m in self.maps:
            ps.extend(m.parameters)
        return ps + [self.W_out, self.b_out]

    def __call__(self, X):
        h = ad.activation(self.activation, ad.bias_add(ad.matmul(self.W_in, X), self.b_in))
        h, _ = blocks.stack_forward(self.spec, self.maps, h)
        return ad.bias_add(ad.matmul(self.W_out, h), self.b_out)


class RecurrentClassifier:
    """LSTM/GRU over the feature row split into ``steps`` equal chunks; readout of the last ``h``."""

    def __init__(self, kind, n_features, n_classes, steps, hidden=128, rng=None, family=None,
                 alpha=None):
        if n_features % steps:
            raise ValueError(f"{n_features} features do not split into {steps} steps")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.steps = steps
        self.family = family or kind
        self.alpha = alpha
        self.cell = recurrent.CellParams.init(kind, n_features // steps, hidden, rng)
        self.W_out = Parameter("W_out", _uniform(rng, hidden, (n_classes, hidden)))
        self.b_out = Parameter("b_out", np.zeros((n_classes, 1)))

    @property
    def parameters(self):
        return self.cell.parameters + [self.W_out, self.b_out]

    def __call__(self, X):
        X = np.asarray(getattr(X, "data", X))
        width = X.shape[0] // self.steps
        inputs = [X[k * width:(k + 1) * width] for k in range(self.steps)]
        _, state = recurrent.run_sequence(self.cell, inputs, family=self.family, alpha=self.alpha)
        return ad.bias_add(ad.matmul(self.W_out, state.h), self.b_out)


class SequenceRegressor:
    """Scalar next-value predictor: an LSTM (optionally residual-wrapped) with a linear readout."""

    def __init__(self, family="heun", alpha=None, hidden=32, rng=None):
        if family not in SEQUENCE_MODELS:
            raise ValueError(f"unknown sequence model {family!r}")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.family = family
        self.alpha = 0.5 if family == "heun" else alpha
        self.cell = recurrent.CellParams.init("lstm", 1, hidden, rng)
        self.W_out = Parameter("W_out", _uniform(rng, hidden, (1, hidden)))
        self.b_out = Parameter("b_out", np.zeros((1, 1)))

    @property
    def parameters(self):
        return self.cell.parameters + [self.W_out, self.b_out]

    def step(self, x, state):
        if self.family == "lstm":
            state = recurrent.lstm_step(self.cell, x, state)
        else:
            state = recurrent.residual_lstm_step(self.cell, x, state, self.family, self.alpha)
        return ad.bias_add(ad.matmul(self.W_out, state.h), self.b_out), state

    def __call__(self, U):
        """Teacher-forced predictions for inputs ``U`` of shape ``(T, B)``; returns ``(T, B)``."""
        U = np.asarray(U, dtype=np.float64)
        state = recurrent.zero_state(self.cell.hidden_size, U.shape[1])
        preds = []
        for t in range(U.shape[0]):
            y, state = self.step(U[t:t + 1], state)
            preds.append(y)
        return ad.concat(preds, axis=0)

    def generate(self, seed_values, n_steps):
        """Feed ``seed_values`` then ``n_steps`` of the model's own outputs; returns the free-run outputs."""
        state = recurrent.zero_state(self.cell.hidden_size, 1)
        y = None
        for v in seed_values:
            y, state = self.step(np.array([[v]]), state)
        out = []
        for _ in range(n_steps):
            out.append(float(y.data[0, 0]))
            y, state = self.step(y.data, state)
        return np.asarray(out)


def build_classifier(config: TrainConfig, n_features, n_classes):
    rng = np.random.default_rng(config.seed)
    if config.model == "blocks":
        spec = blocks.BlockSpec(config.family, config.depth, config.share_weights,
                                config.alpha if config.family == "extheun" else None)
        return BlockClassifier(n_features, n_classes, spec, config.hidden, config.activation, rng)
    if config.model in ("lstm", "gru"):
        return RecurrentClassifier(config.model, n_features, n_classes, config.sequence_steps,
                                   config.hidden, rng)
    raise ValueError(f"unknown model {config.model!r}")


# ---------------------------------------------------------------- loops


def evaluate(model, dataset: LabeledDataset, batch_size=1000, loss_kind="softmax_cross_entropy"):
    """``(mean loss, accuracy)`` without recording a tape."""
    if len(dataset) == 0:
        return float("nan"), 0.0
    total, correct = 0.0, 0
    for start in range(0, len(dataset), batch_size):
        X = dataset.features[start:start + batch_size]
        y = dataset.labels[start:start + batch_size]
        logits = model(X.T)
        total += ad.loss(loss_kind, logits, y).item() * len(y)
        correct += int((np.argmax(logits.data, axis=0) == y).sum())
    return total / len(dataset), correct / len(dataset)


def _clock(config, start):
    return time.perf_counter() - start if config.record_wall_time else 0.0


def train_classifier(config: TrainConfig, train: LabeledDataset, test: LabeledDataset,
                     model=None, progress=None) -> MetricsHistory:
    """Minibatch training with one metrics row per epoch, evaluated on ``test``.

    Raises :class:`NonFiniteLoss` carrying the history recorded so far.
    """
    model = model or build_classifier(config, train.features.shape[1], train.n_classes)
    opt = config.make_optimizer()
    history = MetricsHistory()
    start = time.perf_counter()
    for epoch in range(1, config.epochs + 1):
        total = 0.0
        try:
            for X, y in batch_iter(train, config.batch_size, config.seed, epoch):
                with Tape() as tape:
                    loss = ad.loss(config.loss, model(X.T), y)
                tape.backward(loss)
                opt.step(model.parameters)
                total += loss.item() * len(y)
            eval_loss, acc = evaluate(model, test, loss_kind=config.loss)
        except NonFiniteLoss as exc:
            raise NonFiniteLoss(f"epoch {epoch}: {exc}", history) from exc
        history.append(MetricsRecord(epoch, total / len(train), eval_loss, acc, _clock(config, start)))
        if progress:
            progress(history.records[-1])
    return history


def sliding_windows(values, window, stride=1):
    """Stack windows of ``values`` as columns: ``(window, n_windows)``."""
    values = np.asarray(values, dtype=np.float64)
    starts = range(0, len(values) - window + 1, stride)
    return np.stack([values[s:s + window] for s in starts], axis=1)


def points_per_period(times):
    dt = times[1] - times[0]
    return int(round(2 * math.pi / dt))


@dataclass
class SequenceResult:
    history: MetricsHistory
    generated: np.ndarray
    truth: np.ndarray
    generation_mse: float


GENERATION_TOLERANCE = 0.1


def train_seq_predictor(config: TrainConfig, dataset: SequenceDataset, progress=None) -> SequenceResult:
    """Windowed teacher-forced MSE training followed by free-running generation.

    The series is split in time: the first ``1 - eval_fraction`` trains, the
    tail is held out. Each epoch the model is seeded with the first
    ``seed_steps`` held-out values and run free for one period;
    ``eval_accuracy`` is the fraction of generated points within
    ``GENERATION_TOLERANCE`` of the truth.
    """
    inputs, targets = dataset.series[0]
    n = len(inputs)
    split = int(round(n * (1.0 - config.eval_fraction)))
    period = points_per_period(dataset.times) if dataset.times is not None else config.window
    horizon = min(period, n - split - config.seed_steps)
    if horizon < 1:
        raise ValueError("held-out segment is too short for seeding plus one generated point")

    U = sliding_windows(inputs[:split], config.window, config.window_stride)
    Y = sliding_windows(targets[:split], config.window, config.window_stride)
    U_eval = sliding_windows(inputs[split:], config.window, config.window)
    Y_eval = sliding_windows(targets[split:], config.window, config.window)
    seed_values = inputs[split:split + config.seed_steps]
    truth = inputs[split + config.seed_steps:split + config.seed_steps + horizon]

    rng = np.random.default_rng(config.seed)
    family = "lstm" if config.family == "plain" else config.family
    model = SequenceRegressor(family, config.alpha, config.hidden, rng)
    opt = config.make_optimizer()
    history = MetricsHistory()
    generated = np.zeros(horizon)
    start = time.perf_counter()
    for epoch in range(1, config.epochs + 1):
        order = np.random.default_rng([config.seed, epoch]).permutation(U.shape[1])
        total = 0.0
        try:
            for s in range(0, len(order), config.batch_size):
                idx = order[s:s + config.batch_size]
                with Tape() as tape:
                    loss = ad.mse(model(U[:, idx]), Y[:, idx])
                tape.backward(loss)
                opt.step(model.parameters)
                total += loss.item() * len(idx)
            eval_loss = ad.mse(model(U_eval), Y_eval).item()
        except NonFiniteLoss as exc:
            raise NonFiniteLoss(f"epoch {epoch}: {exc}", history) from exc
        generated = model.generate(seed_values, horizon)
        acc = float(np.mean(np.abs(generated - truth) <= GENERATION_TOLERANCE))
        history.append(MetricsRecord(epoch, total / U.shape[1], eval_loss, acc, _clock(config, start)))
        if progress:
            progress(history.records[-1])
    mse = float(np.mean((generated - truth) ** 2)) if config.epochs else float("nan")
    return SequenceResult(history, generated, truth, mse)
