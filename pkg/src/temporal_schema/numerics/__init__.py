"""Dense differentiable numerics for the graph model."""

from . import ops
from .store import ParamStore, backward, grad_check
from .tensor import ShapeError, Tensor, constant, grad_enabled, no_grad

__all__ = [
    "ParamStore",
    "ShapeError",
    "Tensor",
    "backward",
    "constant",
    "grad_check",
    "grad_enabled",
    "no_grad",
    "ops",
]
