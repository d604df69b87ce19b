"""Adam optimizer with explicit, serialisable state."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ContractError


@dataclass
class OptimState:
    lr: float = 2e-4
    betas: tuple = (0.5, 0.999)
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


class Adam:
    """Bias-corrected Adam over a fixed list of named parameters.

    Gradients are read but never cleared; callers zero them between steps.
    """

    def __init__(self, params, lr=2e-4, betas=(0.5, 0.999), eps=1e-8):
        self.params = list(params)
        names = [p.name for p in self.params]
        if len(set(names)) != len(names):
            raise ContractError("optimizer parameters must have unique names")
        self.state = OptimState(lr=lr, betas=tuple(betas), eps=eps)
        for p in self.params:
            self.state.m[p.name] = np.zeros_like(p.data)
            self.state.v[p.name] = np.zeros_like(p.data)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        for p in self.params:
            if p.grad is None:
                raise ContractError(f"optimizer step: parameter '{p.name}' has no gradient")
        st = self.state
        st.step += 1
        b1, b2 = st.betas
        c1 = 1.0 - b1**st.step
        c2 = 1.0 - b2**st.step
        for p in self.params:
            g = p.grad
            m = st.m[p.name]
            v = st.v[p.name]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            if st.lr == 0:
                continue
            update = (st.lr / c1) * m / (np.sqrt(v / c2) + st.eps)
            p.data -= update.astype(p.data.dtype, copy=False)

    def state_arrays(self, prefix: str) -> dict:
        out = {}
        for name in self.state.m:
            out[f"{prefix}.m.{name}"] = self.state.m[name]
            out[f"{prefix}.v.{name}"] = self.state.v[name]
        return out

    def load_state_arrays(self, prefix: str, arrays: dict, step: int) -> None:
        for name in self.state.m:
            self.state.m[name][...] = arrays[f"{prefix}.m.{name}"]
            self.state.v[name][...] = arrays[f"{prefix}.v.{name}"]
        self.state.step = step
