"""Explicit one-step integrators and an empirical order-of-accuracy fit.

The step functions only use ``+`` and ``*`` on the state, so they accept
floats, numpy arrays or :class:`~heunflow.autodiff.Tensor` states alike.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import AnalyticRequired, NonFiniteState, check_alpha

EULER = "euler"
HEUN = "heun"
WEIGHTED_HEUN = "weighted_heun"
METHODS = (EULER, HEUN, WEIGHTED_HEUN)


def _values(x):
    return np.asarray(getattr(x, "data", x), dtype=np.float64)


def _checked(x, step=None):
    if not np.isfinite(_values(x)).all():
        where = "" if step is None else f" at step {step}"
        raise NonFiniteState(f"state became non-finite{where}", step=step)
    return x


def _check_h(h):
    if not h > 0:
        raise ValueError(f"step size must be positive, got {h!r}")


def euler_step(f, t, x, h):
    _check_h(h)
    return _checked(x + h * f(t, x))


def heun_step(f, t, x, h):
    _check_h(h)
    slope = f(t, x)
    predicted = x + h * slope
    return _checked(x + (h / 2) * (slope + f(t + h, predicted)))


def weighted_heun_step(f, t, x, h, alpha):
    """Heun step with corrector slope ``(1-alpha) f(x) + alpha f(x_pred)``.

    ``alpha=0`` reproduces :func:`euler_step` and ``alpha=0.5``
    :func:`heun_step` bit for bit.
    """
    alpha = check_alpha(alpha)
    _check_h(h)
    slope = f(t, x)
    predicted = x + h * slope
    return _checked(x + h * ((1 - alpha) * slope + alpha * f(t + h, predicted)))


@dataclass(frozen=True)
class SolverSpec:
    method: str = HEUN
    h: float = 0.1
    alpha: float = 0.5

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; expected one of {METHODS}")
        _check_h(self.h)
        check_alpha(self.alpha)

    def step(self, f, t, x, h=None):
        h = self.h if h is None else h
        if self.method == EULER:
            return euler_step(f, t, x, h)
        if self.method == HEUN:
            return heun_step(f, t, x, h)
        return weighted_heun_step(f, t, x, h, self.alpha)


@dataclass(frozen=True)
class OdeProblem:
    f: Callable
    x0: object
    t0: float = 0.0
    t_end: float = 1.0
    analytic: Callable | None = None

    def __post_init__(self):
        if not self.t_end > self.t0:
            raise ValueError("t_end must exceed t0")
        if self.analytic is not None:
            if not np.allclose(_values(self.analytic(self.t0)), _values(self.x0), rtol=1e-12, atol=0):
                raise ValueError("analytic(t0) disagrees with x0")


@dataclass
class Trajectory:
    times: list
    states: list

    @property
    def endpoint(self):
        return self.states[-1]


def integrate(problem: OdeProblem, spec: SolverSpec) -> Trajectory:
    """Step from ``t0`` to ``t_end``; the last step is shortened to land exactly."""
    t, x = problem.t0, problem.x0
    times, states = [t], [x]
    n_steps = math.ceil((problem.t_end - problem.t0) / spec.h - 1e-9)
    for k in range(n_steps):
        last = k == n_steps - 1
        h = problem.t_end - t if last else spec.h
        try:
            x = spec.step(problem.f, t, x, h)
        except NonFiniteState as exc:
            raise NonFiniteState(f"state became non-finite at step {k}", step=k) from exc
        t = problem.t_end if last else problem.t0 + (k + 1) * spec.h
        times.append(t)
        states.append(x)
    return Trajectory(times, states)


def endpoint_error(problem: OdeProblem, spec: SolverSpec) -> float:
    if problem.analytic is None:
        raise AnalyticRequired("endpoint error needs an analytic solution")
    traj = integrate(problem, spec)
    diff = _values(traj.endpoint) - _values(problem.analytic(problem.t_end))
    return float(np.max(np.abs(diff)))


def empirical_order(problem: OdeProblem, method: str, h_list: Sequence[float], alpha: float = 0.5):
    """Least-squares slope of log(endpoint error) against log(h).

    Returns ``(order, errors)``.
    """
    if problem.analytic is None:
        raise AnalyticRequired("order estimation needs an analytic solution")
    if len(h_list) < 2:
        raise ValueError("need at least two step sizes")
    errors = [endpoint_error(problem, SolverSpec(method, h, alpha)) for h in h_list]
    slope, _ = np.polyfit(np.log(h_list), np.log(errors), 1)
    return float(slope), errors


def sqrt_growth_problem(t_end: float = 4.0) -> OdeProblem:
    """``x' = 2 sqrt(x)``, ``x(0) = 1`` with exact solution ``(t + 1)^2``."""

    def f(t, x):
        # clamp: float undershoot must not reach sqrt of a negative
        return 2.0 * np.sqrt(np.maximum(x, 0.0))

    return OdeProblem(f=f, x0=1.0, t0=0.0, t_end=t_end, analytic=lambda t: (t + 1.0) ** 2)
