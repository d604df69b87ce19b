"""Minimal module system: parameter discovery by attribute path, and layers."""

from __future__ import annotations

import numpy as np

from ..errors import ContractError, DimensionError
from . import ops
from .tensor import Parameter, Tensor


class Module:
    """Base class.  Parameters and sub-modules are found through attributes.

    Names are dotted attribute paths, e.g. ``drb.phi.conv1.weight``; lists of
    modules contribute their index as a path component.  A module reachable
    through two attributes (shared weights) is reported once, under the first.
    """

    def named_parameters(self, prefix: str = "", _seen=None):
        seen = set() if _seen is None else _seen
        for key, value in vars(self).items():
            path = f"{prefix}{key}"
            if isinstance(value, Parameter):
                if id(value) not in seen:
                    seen.add(id(value))
                    yield path, value
            elif isinstance(value, Module):
                yield from value.named_parameters(path + ".", seen)
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{path}.{i}.", seen)

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def assign_names(self, prefix: str = "") -> None:
        seen = set()
        for name, p in self.named_parameters(prefix):
            if name in seen:
                raise ContractError(f"duplicate parameter name {name}")
            seen.add(name)
            p.name = name

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def parameter_count(self) -> int:
        return int(sum(p.size for p in self.parameters()))

    def state_dict(self, prefix: str = "") -> dict:
        return {name: p.data.copy() for name, p in self.named_parameters(prefix)}

    def load_state_dict(self, arrays: dict, prefix: str = "") -> None:
        for name, p in self.named_parameters(prefix):
            if name not in arrays:
                raise ContractError(f"missing tensor '{name}' in state")
            src = np.asarray(arrays[name])
            if src.shape != p.shape:
                raise DimensionError(f"tensor '{name}': stored shape {src.shape} != expected {p.shape}")
            p.data[...] = src

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def _uniform(rng, shape, bound):
    return rng.uniform(-bound, bound, size=shape)


class Conv2d(Module):
    def __init__(self, cin, cout, k=3, stride=1, padding=None, *, rng, bias=True, zero_init=False, gain=np.sqrt(2.0)):
        padding = k // 2 if padding is None else padding
        fan_in = cin * k * k
        if zero_init:
            w = np.zeros((cout, cin, k, k))
        else:
            # He-style uniform, variance gain**2 / fan_in
            w = _uniform(rng, (cout, cin, k, k), gain * np.sqrt(3.0 / fan_in))
        self.weight = Parameter(w)
        self.bias = Parameter(np.zeros(cout)) if bias else None
        self.stride = stride
        self.padding = padding

    def forward(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)


class Linear(Module):
    def __init__(self, cin, cout, *, rng, gain=1.0):
        self.weight = Parameter(_uniform(rng, (cin, cout), gain * np.sqrt(3.0 / cin)))
        self.bias = Parameter(np.zeros((1, cout)))

    def forward(self, x: Tensor) -> Tensor:
        return ops.add(ops.matmul(x, self.weight), self.bias)


class InstanceNorm2d(Module):
    """Per-instance, per-channel standardisation followed by a learned affine."""

    def __init__(self, channels: int):
        self.channels = channels
        self.gamma = Parameter(np.ones((1, channels, 1, 1)))
        self.beta = Parameter(np.zeros((1, channels, 1, 1)))

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 4 or x.shape[1] != self.channels:
            raise DimensionError(f"InstanceNorm2d({self.channels}) got input of shape {x.shape}")
        return ops.add(ops.mul(ops.standardize(x), self.gamma), self.beta)


def instance_norm(x: Tensor, gamma: Tensor, beta: Tensor) -> Tensor:
    """Functional IN with explicit (1, C, 1, 1) or (N, C, 1, 1) affine tensors."""
    if x.ndim != 4 or gamma.shape[1] != x.shape[1] or beta.shape[1] != x.shape[1]:
        raise DimensionError(f"instance_norm: input {x.shape} vs gamma {gamma.shape} / beta {beta.shape}")
    return ops.add(ops.mul(ops.standardize(x), gamma), beta)


class frozen:
    """Context manager that stops gradient accumulation into the given modules' parameters.

    Inputs still receive gradients through the frozen layers.
    """

    def __init__(self, *modules):
        self.params = [p for m in modules for p in m.parameters()]

    def __enter__(self):
        for p in self.params:
            p.requires_grad = False
        return self

    def __exit__(self, *exc):
        for p in self.params:
            p.requires_grad = True
        return False
