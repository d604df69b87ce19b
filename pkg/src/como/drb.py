"""The three-branch disentanglement residual block.

Given encoder features ``hX`` the block computes a phi-dependent shared
feature ``h_phi`` (FIN-normalised branch) and two private features, ``h_E``
for the real target and ``h_EM`` for the guidance model, and returns::

    hY  = h_phi + h_E  + hX
    hYM = h_phi + h_EM + hX

Each branch is pre-activation: norm, ReLU, conv, norm, ReLU, conv, with the
last conv zero-initialised so a fresh block is the identity on both outputs.
"""

from __future__ import annotations

import enum

import numpy as np

from .errors import ContractError
from .fin import FinParams
from .guidance import Manifold
from .numerics import ops
from .numerics.nn import Conv2d, InstanceNorm2d, Module
from .numerics.tensor import Tensor


class Branch(Module):
    """Channel-preserving residual branch with plain IN."""

    def __init__(self, channels: int, *, rng: np.random.Generator):
        self.norm1 = InstanceNorm2d(channels)
        self.conv1 = Conv2d(channels, channels, 3, rng=rng)
        self.norm2 = InstanceNorm2d(channels)
        self.conv2 = Conv2d(channels, channels, 3, rng=rng, zero_init=True)

    def forward(self, h: Tensor) -> Tensor:
        h = self.conv1(ops.relu(self.norm1(h)))
        return self.conv2(ops.relu(self.norm2(h)))


class PhiBranch(Module):
    """Same layout as :class:`Branch` with both normalisations replaced by FIN."""

    def __init__(self, channels: int, manifold: Manifold, *, rng: np.random.Generator):
        self.fin1 = FinParams(channels, manifold)
        self.conv1 = Conv2d(channels, channels, 3, rng=rng)
        self.fin2 = FinParams(channels, manifold)
        self.conv2 = Conv2d(channels, channels, 3, rng=rng, zero_init=True)

    def forward(self, h: Tensor, phi) -> Tensor:
        h = self.conv1(ops.relu(self.fin1(h, phi)))
        return self.conv2(ops.relu(self.fin2(h, phi)))


class DrbBlock(Module):
    def __init__(self, channels: int, manifold: Manifold, *, rng: np.random.Generator):
        self.channels = channels
        self.manifold = Manifold(manifold)
        self.phi = PhiBranch(channels, self.manifold, rng=rng)
        self.real = Branch(channels, rng=rng)
        self.model = Branch(channels, rng=rng)

    def branches(self, hX: Tensor, phi):
        """(h_phi, h_E, h_EM) before residual summation."""
        return self.phi(hX, phi), self.real(hX), self.model(hX)

    def forward(self, hX: Tensor, phi, *, need_model: bool = True):
        return drb_forward(self, hX, phi, need_model=need_model)


def combine(hX: Tensor, h_phi: Tensor, h_e: Tensor, h_em: Tensor | None):
    """Residual summation of the branch outputs; ``h_em=None`` skips hYM."""
    for name, h in (("phi", h_phi), ("real", h_e), ("model", h_em)):
        if h is not None and h.shape != hX.shape:
            raise ContractError(f"DRB branch '{name}' changed shape {hX.shape} -> {h.shape}")
    shared = ops.add(h_phi, hX)
    hY = ops.add(shared, h_e)
    hYM = None if h_em is None else ops.add(shared, h_em)
    return hY, hYM


def drb_forward(block: DrbBlock, hX: Tensor, phi, *, need_model: bool = True):
    """Return ``(hY, hYM)``; with ``need_model=False`` the model branch is skipped and hYM is None."""
    h_em = block.model(hX) if need_model else None
    return combine(hX, block.phi(hX, phi), block.real(hX), h_em)


class Direction(str, enum.Enum):
    FORWARD = "X->Y"
    BACKWARD = "Y->X"
