"""Dense f64 tensors with define-by-run reverse-mode differentiation.

Values are numpy arrays of rank 0, 1 or 2. Batched states are stored as
columns: a batch of ``B`` vectors of width ``n`` is an ``(n, B)`` matrix, so
a dense layer is simply ``W @ x``.

A :class:`Tape` records every operation whose inputs are tracked. Parameters
used while a tape is active (``with Tape() as tape:``) are watched
automatically, so model code never has to thread the tape through::

    with Tape() as tape:
        loss = mse(matmul(W, x), y)
    grads = tape.backward(loss)      # {Parameter: ndarray}
"""

from __future__ import annotations

import contextvars
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import expit

from .errors import NonFiniteLoss, NotScalar, ShapeMismatch

_ACTIVE_TAPE: contextvars.ContextVar["Tape | None"] = contextvars.ContextVar(
    "heunflow_active_tape", default=None
)


def _frozen(arr):
    arr.flags.writeable = False
    return arr


class Tensor:
    """Immutable rank-0..2 float64 array, optionally tracked on a tape."""

    __slots__ = ("data", "tape", "node")
    __array_ufunc__ = None  # make numpy defer to our reflected operators

    def __init__(self, data, *, tape=None, node=None):
        arr = np.array(data, dtype=np.float64)
        if arr.ndim > 2:
            raise ShapeMismatch(f"tensors have rank <= 2, got shape {arr.shape}")
        self.data = _frozen(arr)
        self.tape = tape
        self.node = node

    @classmethod
    def _wrap(cls, arr, tape=None, node=None):
        # skips the defensive copy for arrays produced internally
        t = cls.__new__(cls)
        t.data = _frozen(np.asarray(arr, dtype=np.float64))
        t.tape = tape
        t.node = node
        return t

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    @property
    def tracked(self):
        return self.node is not None

    def numpy(self):
        return self.data.copy()

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _not_scalar(self)

    def detach(self):
        return Tensor._wrap(self.data)

    def __array__(self, dtype=None, copy=None):
        return self.data if dtype is None else self.data.astype(dtype)

    def __repr__(self):
        flag = f", node={self.node}" if self.tracked else ""
        return f"Tensor({self.data!r}{flag})"

    def __len__(self):
        return len(self.data)

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        if isinstance(other, (int, float, np.number)):
            return scale(other, self)
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(-1.0, self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)


def _not_scalar(t):
    raise NotScalar(f"expected a single element, got shape {t.shape}")


class Parameter:
    """Named trainable array. ``value`` is updated in place by optimizers."""

    def __init__(self, name: str, value):
        self.name = name
        self.value = np.array(value, dtype=np.float64)
        if self.value.ndim > 2:
            raise ShapeMismatch(f"parameter {name!r} has rank > 2")
        self.grad = np.zeros_like(self.value)

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self):
        self.grad = np.zeros_like(self.value)

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.value.shape})"


@dataclass
class Node:
    kind: str
    inputs: tuple[int, ...]  # -1 marks an untracked (constant) input
    vjp: Callable[[np.ndarray], Sequence[np.ndarray]] | None
    shape: tuple[int, ...]


@dataclass
class Tape:
    nodes: list[Node] = field(default_factory=list)
    grads: dict[int, np.ndarray] = field(default_factory=dict)
    _watched: dict[int, tuple[Parameter, int]] = field(default_factory=dict)
    _token: object = None

    def __enter__(self):
        self._token = _ACTIVE_TAPE.set(self)
        return self

    def __exit__(self, *exc):
        _ACTIVE_TAPE.reset(self._token)
        self._token = None
        return False

    def _append(self, kind, inputs, vjp, shape):
        self.nodes.append(Node(kind, tuple(inputs), vjp, tuple(shape)))
        return len(self.nodes) - 1

    def watch(self, value) -> Tensor:
        """Return a tracked leaf for ``value``.

        Parameters are memoized so every use inside one pass shares a node.
        """
        if isinstance(value, Parameter):
            hit = self._watched.get(id(value))
            if hit is not None:
                return Tensor._wrap(value.value.copy(), self, hit[1])
            node = self._append("param", (), None, value.value.shape)
            self._watched[id(value)] = (value, node)
            return Tensor._wrap(value.value.copy(), self, node)
        data = value.data if isinstance(value, Tensor) else np.array(value, dtype=np.float64)
        node = self._append("leaf", (), None, data.shape)
        return Tensor._wrap(data.copy(), self, node)

    @property
    def parameters(self):
        return [p for p, _ in self._watched.values()]

    def backward(self, root: Tensor) -> dict[Parameter, np.ndarray]:
        if root.size != 1:
            raise NotScalar(f"backward needs a scalar root, got shape {root.shape}")
        if root.tape is not self:
            raise ValueError("root was not produced on this tape")
        grads = {root.node: np.ones(root.shape)}
        for idx in range(root.node, -1, -1):
            g = grads.get(idx)
            if g is None:
                continue
            node = self.nodes[idx]
            if node.vjp is None:
                continue
            for src, gi in zip(node.inputs, node.vjp(g)):
                if src < 0 or gi is None:
                    continue
                prev = grads.get(src)
                grads[src] = gi if prev is None else prev + gi
        self.grads = grads
        out = {}
        for param, node in self._watched.values():
            g = grads.get(node)
            param.grad = np.zeros_like(param.value) if g is None else np.array(g)
            out[param] = param.grad
        return out

    def grad(self, t: Tensor) -> np.ndarray:
        """Gradient of the last backward root w.r.t. tracked tensor ``t``."""
        g = self.grads.get(t.node)
        return np.zeros(t.shape) if g is None else g


def active_tape() -> Tape | None:
    return _ACTIVE_TAPE.get()


def backward(root: Tensor, tape: Tape | None = None) -> dict[Parameter, np.ndarray]:
    tape = tape or root.tape
    if tape is None:
        raise ValueError("root is not tracked on any tape")
    return tape.backward(root)


def lift(x) -> Tensor:
    """Coerce parameters, arrays and scalars to tensors."""
    if isinstance(x, Tensor):
        return x
    if isinstance(x, Parameter):
        tape = _ACTIVE_TAPE.get()
        if tape is not None:
            return tape.watch(x)
        return Tensor._wrap(x.value.copy())
    return Tensor(x)


def _record(kind, inputs, out, vjp):
    tape = None
    for t in inputs:
        if t.node is not None:
            if tape is not None and t.tape is not tape:
                raise ValueError("operands are tracked on different tapes")
            tape = t.tape
    if tape is None:
        return Tensor._wrap(out)
    ids = [t.node if t.node is not None else -1 for t in inputs]
    node = tape._append(kind, ids, vjp, np.shape(out))
    return Tensor._wrap(out, tape, node)


# ---------------------------------------------------------------- linear algebra


def matmul(a, b) -> Tensor:
    a, b = lift(a), lift(b)
    A, B = a.data, b.data
    if A.ndim == 0 or B.ndim == 0:
        raise ShapeMismatch("matmul operands must have rank >= 1")
    if A.shape[-1] != B.shape[0]:
        raise ShapeMismatch(f"matmul inner dimensions differ: {A.shape} @ {B.shape}")
    out = A @ B

    def vjp(g):
        if A.ndim == 2 and B.ndim == 2:
            return g @ B.T, A.T @ g
        if A.ndim == 2:
            return np.outer(g, B), A.T @ g
        if B.ndim == 2:
            return B @ g, np.outer(A, g)
        return g * B, g * A

    return _record("matmul", (a, b), out, vjp)


def concat(parts, axis=0) -> Tensor:
    """Stack along rows (axis 0) or columns (axis 1)."""
    parts = [lift(p) for p in parts]
    arrays = [p.data for p in parts]
    try:
        out = np.concatenate(arrays, axis=axis)
    except ValueError as exc:
        raise ShapeMismatch(str(exc)) from None
    bounds = np.cumsum([0] + [a.shape[axis] for a in arrays])

    def vjp(g):
        if axis == 0:
            return [g[bounds[i]:bounds[i + 1]] for i in range(len(arrays))]
        return [g[:, bounds[i]:bounds[i + 1]] for i in range(len(arrays))]

    return _record("concat", parts, out, vjp)


def slice_rows(x, start: int, stop: int) -> Tensor:
    x = lift(x)
    X = x.data
    out = X[start:stop]

    def vjp(g):
        full = np.zeros_like(X)
        full[start:stop] = g
        return (full,)

    return _record("slice_rows", (x,), out, vjp)


def bias_add(x, b) -> Tensor:
    """Add a bias vector to every column of ``x``.

    ``b`` has shape ``(n,)`` or ``(n, 1)``; this is the only non-scalar
    broadcast the engine supports.
    """
    x, b = lift(x), lift(b)
    X, Bv = x.data, b.data
    col = Bv.reshape(-1)
    if col.shape[0] != X.shape[0] or Bv.size != col.shape[0]:
        raise ShapeMismatch(f"bias of shape {Bv.shape} does not fit rows of {X.shape}")
    out = X + (col[:, None] if X.ndim == 2 else col)

    def vjp(g):
        gb = g.sum(axis=1) if g.ndim == 2 else g
        return g, gb.reshape(Bv.shape)

    return _record("bias_add", (x, b), out, vjp)


# ---------------------------------------------------------------- elementwise


def _pair(a, b):
    a, b = lift(a), lift(b)
    if a.shape == b.shape or a.data.ndim == 0 or b.data.ndim == 0:
        return a, b
    raise ShapeMismatch(f"shapes {a.shape} and {b.shape} differ")


def _unbroadcast(g, shape):
    return g if g.shape == shape else np.asarray(g.sum()).reshape(shape)


def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    sa, sb = a.shape, b.shape
    out = a.data + b.data
    return _record("add", (a, b), out, lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    sa, sb = a.shape, b.shape
    out = a.data - b.data
    return _record("sub", (a, b), out, lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    A, B = a.data, b.data
    out = A * B
    return _record(
        "mul", (a, b), out, lambda g: (_unbroadcast(g * B, A.shape), _unbroadcast(g * A, B.shape))
    )


def scale(c: float, x) -> Tensor:
    x = lift(x)
    c = float(c)
    return _record("scale", (x,), c * x.data, lambda g: (c * g,))


def elementwise(kind: str, a, b=None) -> Tensor:
    """Dispatch ``add``/``sub``/``mul`` or ``scale`` (``scale(c)`` is ``kind='scale', a=c``)."""
    if kind == "add":
        return add(a, b)
    if kind == "sub":
        return sub(a, b)
    if kind == "mul":
        return mul(a, b)
    if kind == "scale":
        return scale(a, b)
    raise ValueError(f"unknown elementwise kind {kind!r}")


# ---------------------------------------------------------------- activations


def sigmoid(x) -> Tensor:
    x = lift(x)
    s = expit(x.data)
    return _record("sigmoid", (x,), s, lambda g: (g * s * (1.0 - s),))


def tanh(x) -> Tensor:
    x = lift(x)
    y = np.tanh(x.data)
    return _record("tanh", (x,), y, lambda g: (g * (1.0 - y * y),))


def relu(x) -> Tensor:
    x = lift(x)
    mask = x.data > 0
    return _record("relu", (x,), np.where(mask, x.data, 0.0), lambda g: (g * mask,))


def identity(x) -> Tensor:
    return lift(x)


ACTIVATIONS = {"sigmoid": sigmoid, "tanh": tanh, "relu": relu, "identity": identity}


def activation(kind: str, x) -> Tensor:
    try:
        fn = ACTIVATIONS[kind]
    except KeyError:
        raise ValueError(f"unknown activation {kind!r}") from None
    return fn(x)


# ---------------------------------------------------------------- reductions and losses


def reduce_sum(x) -> Tensor:
    x = lift(x)
    shape = x.shape
    return _record("sum", (x,), np.asarray(x.data.sum()), lambda g: (np.full(shape, float(g)),))


def reduce_mean(x) -> Tensor:
    x = lift(x)
    shape, n = x.shape, x.size
    return _record(
        "mean", (x,), np.asarray(x.data.mean()), lambda g: (np.full(shape, float(g) / n),)
    )


def _finite_loss(t: Tensor, kind: str) -> Tensor:
    if not np.isfinite(t.data).all():
        raise NonFiniteLoss(f"{kind} loss is not finite ({t.data})")
    return t


def mse(pred, target) -> Tensor:
    """Mean of squared differences over all elements."""
    pred, target = lift(pred), lift(target)
    if pred.shape != target.shape:
        raise ShapeMismatch(f"mse shapes differ: {pred.shape} vs {target.shape}")
    diff = pred.data - target.data
    n = diff.size
    out = np.asarray(np.mean(diff * diff))

    def vjp(g):
        d = (2.0 * float(g) / n) * diff
        return d, -d

    return _finite_loss(_record("mse", (pred, target), out, vjp), "mse")


def softmax_cross_entropy(logits, target) -> Tensor:
    """Mean cross-entropy of column-wise softmax against class targets.

    ``logits`` is ``(C,)`` for one sample or ``(C, B)`` for a batch.
    ``target`` is an integer class (array of ``B`` ints) or a one-hot
    tensor with the logits' shape.
    """
    logits = lift(logits)
    Z = logits.data
    single = Z.ndim == 1
    Z2 = Z[:, None] if single else Z
    if Z2.ndim != 2:
        raise ShapeMismatch("cross-entropy logits must be rank 1 or 2")
    C, B = Z2.shape
    if isinstance(target, (Tensor, Parameter)) or (
        isinstance(target, np.ndarray) and target.dtype.kind == "f"
    ):
        onehot = np.asarray(lift(target).data, dtype=np.float64)
        if onehot.shape != Z.shape:
            raise ShapeMismatch(f"one-hot target {onehot.shape} vs logits {Z.shape}")
        onehot = onehot.reshape(C, B)
    else:
        idx = np.atleast_1d(np.asarray(target)).astype(np.int64)
        if idx.shape != (B,):
            raise ShapeMismatch(f"expected {B} class indices, got shape {idx.shape}")
        if idx.min(initial=0) < 0 or idx.max(initial=0) >= C:
            raise ShapeMismatch(f"class index out of range [0, {C})")
        onehot = np.zeros((C, B))
        onehot[idx, np.arange(B)] = 1.0
    shift = Z2 - Z2.max(axis=0, keepdims=True)
    lse = np.log(np.exp(shift).sum(axis=0, keepdims=True))
    logp = shift - lse
    out = np.asarray(-(onehot * logp).sum() / B)
    probs = np.exp(logp)

    def vjp(g):
        d = (float(g) / B) * (probs * onehot.sum(axis=0, keepdims=True) - onehot)
        return (d.reshape(Z.shape),)

    return _finite_loss(_record("softmax_xent", (logits,), out, vjp), "softmax_cross_entropy")


LOSSES = {"mse": mse, "softmax_cross_entropy": softmax_cross_entropy}


def loss(kind: str, pred, target) -> Tensor:
    try:
        fn = LOSSES[kind]
    except KeyError:
        raise ValueError(f"unknown loss {kind!r}") from None
    return fn(pred, target)


# ---------------------------------------------------------------- gradient checking


def numeric_gradient(fn: Callable[[], float], param: Parameter, eps: float = 1e-5) -> np.ndarray:
    """Central finite differences of scalar ``fn()`` w.r.t. ``param.value``."""
    grad = np.zeros_like(param.value)
    flat = param.value.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        up = fn()
        flat[i] = orig - eps
        down = fn()
        flat[i] = orig
        gflat[i] = (up - down) / (2.0 * eps)
    return grad


def relative_error(a, b) -> float:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    denom = np.linalg.norm(a) + np.linalg.norm(b)
    if denom == 0.0:
        return 0.0
    return float(np.linalg.norm(a - b) / denom)


def gradient_check(loss_fn: Callable[[], Tensor], params: Sequence[Parameter], eps: float = 1e-5):
    """Compare tape gradients with central differences.

    Returns ``{param.name: relative_error}``; ``loss_fn`` must rebuild the
    graph from the current parameter values on every call.
    """
    with Tape() as tape:
        root = loss_fn()
    grads = tape.backward(root)

    def value():
        return loss_fn().item()

    return {
        p.name: relative_error(grads.get(p, np.zeros_like(p.value)), numeric_gradient(value, p, eps))
        for p in params
    }
