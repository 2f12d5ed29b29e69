"""Residual blocks as explicit ODE steps: ResNet (Euler), HeunNet (Heun) and
the alpha-weighted extension, on a small numpy autodiff engine."""

from .autodiff import Parameter, Tape, Tensor
from .blocks import BlockSpec, DenseMap, LinearMap
from .ode_solvers import OdeProblem, SolverSpec, Trajectory
from .training import MetricsHistory, TrainConfig

__all__ = [
    "BlockSpec",
    "DenseMap",
    "LinearMap",
    "MetricsHistory",
    "OdeProblem",
    "Parameter",
    "SolverSpec",
    "Tape",
    "Tensor",
    "TrainConfig",
    "Trajectory",
]
__version__ = "0.1.0"
