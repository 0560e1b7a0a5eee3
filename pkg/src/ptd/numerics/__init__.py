"""Small deterministic reverse-mode autodiff engine on numpy float64 arrays."""
from . import ops
from .init import kaiming_normal, uniform_init
from .gradcheck import GradCheckReport, grad_check, relative_error
from .optim import MissingGradientError, Optimizer, optimizer_step
from .tensor import (
    NonFiniteError,
    ShapeError,
    Tape,
    TapeError,
    Tensor,
    backward,
    constant,
    no_grad,
    parameter,
)

__all__ = [
    "ops", "GradCheckReport", "grad_check", "relative_error", "MissingGradientError",
    "Optimizer", "optimizer_step", "NonFiniteError", "ShapeError", "Tape", "TapeError",
    "Tensor", "backward", "constant", "no_grad", "parameter", "forward",
    "uniform_init", "kaiming_normal",
]

forward = ops.forward
