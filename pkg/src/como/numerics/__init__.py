"""Tensor arithmetic, reverse-mode differentiation and optimisation."""

from . import ops
from .nn import Conv2d, InstanceNorm2d, Linear, Module, frozen, instance_norm
from .optim import Adam, OptimState
from .tensor import Parameter, Tensor, backward, default_dtype, float64_mode, grad_enabled, no_grad, zero_grads

__all__ = [
    "Adam",
    "Conv2d",
    "InstanceNorm2d",
    "Linear",
    "Module",
    "OptimState",
    "Parameter",
    "Tensor",
    "backward",
    "default_dtype",
    "float64_mode",
    "frozen",
    "grad_enabled",
    "instance_norm",
    "no_grad",
    "ops",
    "zero_grads",
]
