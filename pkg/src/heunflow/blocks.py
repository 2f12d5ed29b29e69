"""Depth-wise residual updates built on a shared transition map.

Each block family advances a state ``x`` by one layer:

* plain:         ``F(x)``
* resnet:        ``x + F(x)``                        (Euler, h = 1)
* heun:          ``x + (F(x) + F(x + F(x))) / 2``     (Heun, h = 1)
* extended heun: ``x + (1-a) F(x) + a F(x + F(x))``

The evaluation order of the extended form is fixed so that ``a=0`` and
``a=0.5`` agree bitwise with the resnet and heun forms.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tape, Tensor
from .errors import ShapeMismatch, check_alpha

PLAIN = "plain"
RESNET = "resnet"
HEUN = "heun"
EXTHEUN = "extheun"
FAMILIES = (PLAIN, RESNET, HEUN, EXTHEUN)


class TransitionMap:
    """Shape-preserving differentiable map ``F``.

    Subclasses implement ``__call__(x)`` and list their trainable arrays in
    ``parameters``. ``size`` is the state width (``None`` when unconstrained).
    """

    size: int | None = None
    parameters: list[Parameter] = []

    def __call__(self, x: Tensor) -> Tensor:
        raise NotImplementedError


class DenseMap(TransitionMap):
    """``F(x) = act(W x [+ b])`` with a square weight matrix."""

    def __init__(self, weight, activation="tanh", bias=None, name="W"):
        weight = np.asarray(weight, dtype=np.float64)
        if weight.ndim != 2 or weight.shape[0] != weight.shape[1]:
            raise ShapeMismatch(f"transition weights must be square, got {weight.shape}")
        if activation not in ad.ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        self.size = weight.shape[0]
        self.activation = activation
        self.W = Parameter(name, weight)
        self.b = None if bias is None else Parameter(name + "_bias", np.reshape(bias, (-1, 1)))
        self.parameters = [self.W] + ([self.b] if self.b is not None else [])

    @classmethod
    def init(cls, size, rng, activation="tanh", scale=None, bias=False, name="W"):
        """Uniform(-s, s) weights with ``s = 1/sqrt(size)`` unless ``scale`` is given."""
        s = 1.0 / np.sqrt(size) if scale is None else scale
        w = rng.uniform(-s, s, size=(size, size))
        b = np.zeros(size) if bias else None
        return cls(w, activation, b, name)

    def __call__(self, x):
        x = ad.lift(x)
        if x.shape[0] != self.size:
            raise ShapeMismatch(f"state has {x.shape[0]} rows, map expects {self.size}")
        z = ad.matmul(self.W, x)
        if self.b is not None:
            z = ad.bias_add(z, self.b)
        return ad.activation(self.activation, z)


class LinearMap(DenseMap):
    """``F(x) = A x``; closed-form test fixture."""

    def __init__(self, A, name="A"):
        super().__init__(A, "identity", None, name)


class FunctionMap(TransitionMap):
    """Wrap an arbitrary tensor function (no parameters of its own)."""

    def __init__(self, fn: Callable[[Tensor], Tensor], size=None, parameters=()):
        self.fn = fn
        self.size = size
        self.parameters = list(parameters)

    def __call__(self, x):
        x = ad.lift(x)
        if self.size is not None and x.shape[0] != self.size:
            raise ShapeMismatch(f"state has {x.shape[0]} rows, map expects {self.size}")
        y = ad.lift(self.fn(x))
        if y.shape != x.shape:
            raise ShapeMismatch(f"transition map changed shape {x.shape} -> {y.shape}")
        return y


def zero_map(size=None):
    return FunctionMap(lambda x: ad.scale(0.0, x), size)


def identity_map(size=None):
    return FunctionMap(lambda x: x, size)


def constant_map(c):
    c = np.asarray(c, dtype=np.float64)

    def fn(x):
        col = c.reshape(-1, 1) if x.data.ndim == 2 else c.reshape(-1)
        return ad.add(ad.scale(0.0, x), np.broadcast_to(col, x.shape))

    return FunctionMap(fn, c.shape[0])


def _apply(F, x):
    y = ad.lift(F(x))
    if y.shape != x.shape:
        raise ShapeMismatch(f"transition map changed shape {x.shape} -> {y.shape}")
    return y


def plain_forward(F, x) -> Tensor:
    return _apply(F, ad.lift(x))


def resnet_forward(F, x) -> Tensor:
    x = ad.lift(x)
    return x + _apply(F, x)


def heun_forward(F, x) -> Tensor:
    x = ad.lift(x)
    slope = _apply(F, x)
    predicted = x + slope
    return x + 0.5 * (slope + _apply(F, predicted))


def extended_heun_forward(F, x, alpha) -> Tensor:
    alpha = check_alpha(alpha)
    x = ad.lift(x)
    slope = _apply(F, x)
    predicted = x + slope
    return x + ((1 - alpha) * slope + alpha * _apply(F, predicted))


def block_forward(family, F, x, alpha=None) -> Tensor:
    if family == PLAIN:
        return plain_forward(F, x)
    if family == RESNET:
        return resnet_forward(F, x)
    if family == HEUN:
        return heun_forward(F, x)
    if family == EXTHEUN:
        if alpha is None:
            raise ValueError("extended heun blocks need alpha")
        return extended_heun_forward(F, x, alpha)
    raise ValueError(f"unknown block family {family!r}; expected one of {FAMILIES}")


@dataclass(frozen=True)
class BlockSpec:
    family: str = HEUN
    depth: int = 1
    share_weights: bool = True
    alpha: float | None = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown block family {self.family!r}")
        if self.depth < 1:
            raise ValueError("depth must be >= 1")
        if self.family == EXTHEUN:
            if self.alpha is None:
                raise ValueError("extended heun blocks need alpha")
            check_alpha(self.alpha)


def stack_forward(spec: BlockSpec, F, x0):
    """Apply ``spec.depth`` blocks.

    ``F`` is one map (shared weights) or a sequence of ``depth`` maps.
    Returns ``(x_L, [x_0, ..., x_L])``.
    """
    if isinstance(F, Sequence):
        if spec.share_weights and len(F) != 1:
            raise ValueError("shared-weight stacks take a single transition map")
        if not spec.share_weights and len(F) != spec.depth:
            raise ValueError(f"need {spec.depth} transition maps, got {len(F)}")
        maps = list(F) * (spec.depth if len(F) == 1 else 1)
    else:
        maps = [F] * spec.depth
    x = ad.lift(x0)
    states = [x]
    for layer_map in maps:
        x = block_forward(spec.family, layer_map, x, spec.alpha)
        states.append(x)
    return x, states


def block_jacobian(family, F, x, alpha=None) -> np.ndarray:
    """Exact Jacobian of one block at a single state vector, one reverse pass per row."""
    x = np.asarray(getattr(x, "data", x), dtype=np.float64).reshape(-1, 1)
    n = x.shape[0]
    J = np.empty((n, n))
    for i in range(n):
        with Tape() as tape:
            xt = tape.watch(x)
            y = block_forward(family, F, xt, alpha)
            root = ad.slice_rows(y, i, i + 1)
            root = ad.reduce_sum(root)
        tape.backward(root)
        J[i] = tape.grad(xt).reshape(-1)
    return J


def finite_difference_jacobian(family, F, x, alpha=None, eps=1e-6) -> np.ndarray:
    """Central-difference Jacobian; independent cross-check of :func:`block_jacobian`."""
    x = np.asarray(getattr(x, "data", x), dtype=np.float64).reshape(-1, 1)
    n = x.shape[0]
    J = np.empty((n, n))
    for j in range(n):
        e = np.zeros_like(x)
        e[j] = eps
        up = block_forward(family, F, Tensor(x + e), alpha).data
        down = block_forward(family, F, Tensor(x - e), alpha).data
        J[:, j] = ((up - down) / (2 * eps)).reshape(-1)
    return J
