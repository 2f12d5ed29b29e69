"""LSTM and GRU cells, and sequence runners that wrap a cell in a residual block.

States are column-batched like everything else: ``h`` and ``c`` are
``(hidden, B)`` and each input is ``(input_size, B)``.

For the residual runners the cell defines a transition on the hidden state,
``F(h) = cell(x_t, h).h - h``, and the block update from
:mod:`heunflow.blocks` is applied to ``h``. The LSTM cell state advances
with the last cell evaluation that contributes to the new ``h``: the
corrector evaluation for heun-type blocks with ``alpha > 0``, the predictor
evaluation otherwise.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from . import blocks
from .autodiff import Parameter, Tensor
from .errors import ShapeMismatch, check_alpha

LSTM_GATES = ("i", "f", "o", "g")
GRU_GATES = ("z", "r", "n")


@dataclass
class LstmState:
    h: Tensor
    c: Tensor

    def __post_init__(self):
        self.h, self.c = ad.lift(self.h), ad.lift(self.c)
        if self.h.shape != self.c.shape:
            raise ShapeMismatch(f"h {self.h.shape} and c {self.c.shape} differ")


class CellParams:
    """Gate weights stacked row-wise into one ``(gates * hidden, input + hidden)`` matrix.

    Gate order is ``i, f, o, g`` for LSTM and ``z, r, n`` for GRU. Each gate
    block is ``(hidden, input + hidden)`` with a ``(hidden, 1)`` bias;
    :meth:`gate_weight` and :meth:`gate_bias` return writable views.
    """

    def __init__(self, kind: str, input_size: int, hidden_size: int, weights: dict, biases: dict):
        if kind not in ("lstm", "gru"):
            raise ValueError(f"unknown cell kind {kind!r}")
        self.kind = kind
        self.input_size = input_size
        self.hidden_size = hidden_size
        self.gates = LSTM_GATES if kind == "lstm" else GRU_GATES
        blocks_w, blocks_b = [], []
        for g in self.gates:
            w = np.asarray(weights[g], dtype=np.float64)
            if w.shape != (hidden_size, input_size + hidden_size):
                raise ShapeMismatch(f"gate {g} weight has shape {w.shape}")
            blocks_w.append(w)
            blocks_b.append(np.asarray(biases[g], dtype=np.float64).reshape(hidden_size, 1))
        self.weight = Parameter(f"{kind}_W", np.vstack(blocks_w))
        self.bias = Parameter(f"{kind}_b", np.vstack(blocks_b))

    @property
    def parameters(self) -> list[Parameter]:
        return [self.weight, self.bias]

    def _rows(self, g):
        k = self.gates.index(g)
        return slice(k * self.hidden_size, (k + 1) * self.hidden_size)

    def gate_weight(self, g):
        return self.weight.value[self._rows(g)]

    def gate_bias(self, g):
        return self.bias.value[self._rows(g)]

    @classmethod
    def init(cls, kind, input_size, hidden_size, rng, forget_bias=1.0):
        """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases (forget gate +1)."""
        fan_in = input_size + hidden_size
        s = 1.0 / np.sqrt(fan_in)
        gates = LSTM_GATES if kind == "lstm" else GRU_GATES
        weights = {g: rng.uniform(-s, s, size=(hidden_size, fan_in)) for g in gates}
        biases = {g: np.zeros(hidden_size) for g in gates}
        if kind == "lstm":
            biases["f"] = np.full(hidden_size, forget_bias)
        return cls(kind, input_size, hidden_size, weights, biases)

    @classmethod
    def zeros(cls, kind, input_size, hidden_size):
        gates = LSTM_GATES if kind == "lstm" else GRU_GATES
        shape = (hidden_size, input_size + hidden_size)
        return cls(kind, input_size, hidden_size,
                   {g: np.zeros(shape) for g in gates}, {g: np.zeros(hidden_size) for g in gates})


def _check_io(params, x, h):
    if x.shape[0] != params.input_size:
        raise ShapeMismatch(f"input has {x.shape[0]} rows, cell expects {params.input_size}")
    if h.shape[0] != params.hidden_size:
        raise ShapeMismatch(f"hidden state has {h.shape[0]} rows, cell expects {params.hidden_size}")
    if x.data.ndim != h.data.ndim or (x.data.ndim == 2 and x.shape[1] != h.shape[1]):
        raise ShapeMismatch(f"input {x.shape} and state {h.shape} batch layouts differ")


def lstm_step(params: CellParams, x, state: LstmState) -> LstmState:
    x = ad.lift(x)
    _check_io(params, x, state.h)
    H = params.hidden_size
    z = ad.bias_add(ad.matmul(params.weight, ad.concat([x, state.h])), params.bias)
    gates = ad.sigmoid(ad.slice_rows(z, 0, 3 * H))
    i = ad.slice_rows(gates, 0, H)
    f = ad.slice_rows(gates, H, 2 * H)
    o = ad.slice_rows(gates, 2 * H, 3 * H)
    g = ad.tanh(ad.slice_rows(z, 3 * H, 4 * H))
    c = f * state.c + i * g
    return LstmState(o * ad.tanh(c), c)


def gru_step(params: CellParams, x, h) -> Tensor:
    """Standard GRU; the update gate ``z`` interpolates from ``h`` toward the candidate."""
    x, h = ad.lift(x), ad.lift(h)
    _check_io(params, x, h)
    H = params.hidden_size
    W, b = ad.lift(params.weight), ad.lift(params.bias)
    zr = ad.sigmoid(ad.bias_add(ad.matmul(ad.slice_rows(W, 0, 2 * H), ad.concat([x, h])),
                                ad.slice_rows(b, 0, 2 * H)))
    z = ad.slice_rows(zr, 0, H)
    r = ad.slice_rows(zr, H, 2 * H)
    n = ad.tanh(ad.bias_add(ad.matmul(ad.slice_rows(W, 2 * H, 3 * H), ad.concat([x, r * h])),
                            ad.slice_rows(b, 2 * H, 3 * H)))
    return h + z * (n - h)


def zero_state(hidden_size, batch=None) -> LstmState:
    shape = (hidden_size,) if batch is None else (hidden_size, batch)
    return LstmState(Tensor(np.zeros(shape)), Tensor(np.zeros(shape)))


RESIDUAL_FAMILIES = ("resnet", "heun", "extheun")


def residual_lstm_step(params, x, state: LstmState, family="heun", alpha=None) -> LstmState:
    """One time step with the LSTM's hidden update wrapped in a residual block."""
    return residual_cell_step(lambda h, c: _lstm_hc(params, x, h, c), state, family, alpha)


def _lstm_hc(params, x, h, c):
    s = lstm_step(params, x, LstmState(h, c))
    return s.h, s.c


def residual_cell_step(cell: Callable, state: LstmState, family="heun", alpha=None) -> LstmState:
    """Wrap ``cell(h, c) -> (h', c')`` as ``F(h) = h' - h`` inside a block update."""
    if family not in RESIDUAL_FAMILIES:
        raise ValueError(f"unknown residual family {family!r}")
    if family == "heun":
        alpha = 0.5
    elif family == "extheun":
        alpha = check_alpha(alpha)
    else:
        alpha = 0.0
    evaluations = []

    def F(h):
        h_next, c_next = cell(h, state.c)
        evaluations.append(c_next)
        return h_next - h

    h = state.h
    if family == "resnet":
        h_new = blocks.resnet_forward(F, h)
    elif family == "heun":
        h_new = blocks.heun_forward(F, h)
    else:
        h_new = blocks.extended_heun_forward(F, h, alpha)
    c_new = evaluations[-1] if alpha > 0 else evaluations[0]
    return LstmState(h_new, c_new)


def run_sequence(params: CellParams, inputs: Sequence, state=None, family="lstm", alpha=None):
    """Run a cell over ``inputs`` and return ``(hidden_states, final_state)``.

    ``family`` is ``"lstm"``/``"gru"`` for the bare cell or one of
    ``resnet``/``heun``/``extheun`` for the residual-wrapped cell.
    """
    inputs = [ad.lift(x) for x in inputs]
    if state is None:
        batch = None if not inputs or inputs[0].data.ndim == 1 else inputs[0].shape[1]
        state = zero_state(params.hidden_size, batch)
    if params.kind == "gru" and not isinstance(state, LstmState):
        state = LstmState(state, ad.scale(0.0, ad.lift(state)))
    hiddens = []
    for x in inputs:
        if family in ("lstm", "gru"):
            if params.kind == "gru":
                state = LstmState(gru_step(params, x, state.h), state.c)
            else:
                state = lstm_step(params, x, state)
        elif params.kind == "gru":
            state = residual_cell_step(
                lambda h, c, x=x: (gru_step(params, x, h), c), state, family, alpha
            )
        else:
            state = residual_lstm_step(params, x, state, family, alpha)
        hiddens.append(state.h)
    return hiddens, state


def heun_lstm_sequence(params: CellParams, inputs: Sequence, state=None, alpha=0.5):
    """Hidden states of the Heun-wrapped LSTM over ``inputs`` (``alpha=0.5`` is plain Heun)."""
    family = "heun" if alpha == 0.5 else "extheun"
    hiddens, _ = run_sequence(params, inputs, state, family, alpha)
    return hiddens


def stack_hidden(hiddens) -> np.ndarray:
    """Stack per-step hidden states into ``(T, hidden)`` (or ``(T, hidden, B)``)."""
    return np.stack([ad.lift(h).data for h in hiddens])
