"""Instance normalisation and its functional generalisation over phi.

A FIN layer standardises each channel like ordinary IN, then applies an affine
whose scale and shift are first-order functions of the manifold coordinate:

* linear:  gamma = a_gamma * phi + b_gamma,      beta = a_beta * phi + b_beta
* cyclic:  gamma = a_gamma * cos(phi) + b_gamma, beta = a_beta * sin(phi) + b_beta

``phi`` may be a single :class:`PhiValue` or one raw coordinate per sample.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractError, DimensionError
from .guidance import Manifold, PhiValue
from .numerics import ops
from .numerics.nn import InstanceNorm2d, Module, instance_norm
from .numerics.tensor import Parameter, Tensor

InParams = InstanceNorm2d


def _phi_column(phi, manifold: Manifold) -> np.ndarray:
    """Canonical float32 coordinates as an (N, 1, 1, 1) column."""
    if isinstance(phi, PhiValue):
        if phi.manifold is not manifold:
            raise ContractError(f"FIN expects {manifold.value} phi, got {phi.manifold.value}")
        values = np.array([phi.canonical()], dtype=np.float32)
    else:
        raw = np.asarray(phi, dtype=np.float64).reshape(-1)
        values = np.array([PhiValue(v, manifold).canonical() for v in raw], dtype=np.float32)
    return values.reshape(-1, 1, 1, 1)


def basis(phi, manifold: Manifold):
    """Basis columns (for gamma, for beta) evaluated at phi."""
    col = _phi_column(phi, manifold)
    if manifold is Manifold.CYCLIC:
        return np.cos(col), np.sin(col)
    return col, col


class FinParams(Module):
    """Per-channel (a_gamma, b_gamma, a_beta, b_beta) plus a fixed manifold tag.

    Initialised so the layer starts as plain IN: slopes zero, b_gamma one.
    """

    def __init__(self, channels: int, manifold: Manifold = Manifold.LINEAR):
        self.channels = channels
        self.manifold = Manifold(manifold)
        shape = (1, channels, 1, 1)
        self.a_gamma = Parameter(np.zeros(shape))
        self.b_gamma = Parameter(np.ones(shape))
        self.a_beta = Parameter(np.zeros(shape))
        self.b_beta = Parameter(np.zeros(shape))

    def forward(self, x: Tensor, phi) -> Tensor:
        return fin_forward(x, self, phi)


def fin_eval(p: FinParams, phi):
    """(gamma_phi, beta_phi) as (N, C, 1, 1) tensors, differentiable in all four parameters."""
    bg, bb = basis(phi, p.manifold)
    gamma = ops.add(ops.mul(p.a_gamma, Tensor(bg, dtype=p.a_gamma.dtype)), p.b_gamma)
    beta = ops.add(ops.mul(p.a_beta, Tensor(bb, dtype=p.a_beta.dtype)), p.b_beta)
    return gamma, beta


def fin_forward(x: Tensor, p: FinParams, phi) -> Tensor:
    if x.ndim != 4 or x.shape[1] != p.channels:
        raise DimensionError(f"FIN({p.channels}) got input of shape {x.shape}")
    gamma, beta = fin_eval(p, phi)
    if gamma.shape[0] not in (1, x.shape[0]):
        raise DimensionError(f"FIN got {gamma.shape[0]} phi values for a batch of {x.shape[0]}")
    return instance_norm(x, gamma, beta)


__all__ = ["FinParams", "InParams", "basis", "fin_eval", "fin_forward", "instance_norm"]
