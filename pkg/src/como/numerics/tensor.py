"""Dense tensors with tape-based reverse-mode differentiation.

Every differentiable operation builds a new :class:`Tensor` whose ``_parents``
point at its inputs and whose ``_grad_fn`` maps the output gradient to one
gradient per parent.  :func:`backward` walks that graph once in reverse
topological order and accumulates into the ``grad`` of leaf tensors.

Storage is float32; :func:`float64_mode` switches newly created tensors to
float64, which the gradient-check tests rely on.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

from ..errors import ContractError, DimensionError, NumericError

_state = {"dtype": np.float32, "grad": True}


def default_dtype():
    return _state["dtype"]


@contextlib.contextmanager
def float64_mode():
    """Create tensors in 64-bit precision inside the block."""
    previous = _state["dtype"]
    _state["dtype"] = np.float64
    try:
        yield
    finally:
        _state["dtype"] = previous


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (inference, target building)."""
    previous = _state["grad"]
    _state["grad"] = False
    try:
        yield
    finally:
        _state["grad"] = previous


def grad_enabled() -> bool:
    return _state["grad"]


class Tensor:
    """An n-dimensional real array that may take part in differentiation."""

    __slots__ = ("data", "grad", "requires_grad", "op", "_parents", "_grad_fn", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, *, dtype=None, op: str = "leaf", check: bool = True):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None:
            dtype = default_dtype()
        arr = np.asarray(data, dtype=dtype)
        if check and not np.isfinite(arr).all():
            raise NumericError(f"non-finite value produced by '{op}' (shape {arr.shape})")
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.op = op
        self._parents: tuple = ()
        self._grad_fn = None

    # -- basic introspection -------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.data.dtype, op="detach", check=False)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, op={self.op}{flag})"

    def __len__(self) -> int:
        return self.data.shape[0]

    # -- operator sugar (implemented in ops) ---------------------------------
    def __add__(self, other):
        return _ops().add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return _ops().sub(self, other)

    def __rsub__(self, other):
        return _ops().sub(other, self)

    def __mul__(self, other):
        return _ops().mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            return _ops().scale(self, 1.0 / other)
        return _ops().div(self, other)

    def __neg__(self):
        return _ops().scale(self, -1.0)

    def __matmul__(self, other):
        return _ops().matmul(self, other)

    def backward(self) -> None:
        backward(self)


class Parameter(Tensor):
    """A trainable leaf tensor with a dotted path name."""

    __slots__ = ("name",)

    def __init__(self, data, name: str = "", *, dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype, op="param")
        self.name = name

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape})"


def _ops():
    from . import ops

    return ops


def as_tensor(value) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(value, op="const")


def make_result(data: np.ndarray, parents: Sequence[Tensor], grad_fn: Callable, op: str) -> Tensor:
    """Wrap an op's forward value, recording the edge only when needed."""
    track = _state["grad"] and any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=track, dtype=data.dtype, op=op)
    if track:
        out._parents = tuple(parents)
        out._grad_fn = grad_fn
    return out


def _topological(root: Tensor) -> list:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into every reachable leaf's ``grad``.

    The recorded graph is released afterwards; a tape is good for one pass.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward requires a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    order = _topological(loss)
    pending = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = pending.pop(id(node), None)
        if g is None:
            continue
        if not node._parents:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        parent_grads = node._grad_fn(g)
        for parent, pg in zip(node._parents, parent_grads):
            if pg is None or not parent.requires_grad:
                continue
            if not np.isfinite(pg).all():
                raise NumericError(f"non-finite gradient in backward of '{node.op}'")
            if pg.shape != parent.data.shape:
                raise DimensionError(
                    f"gradient shape {pg.shape} from '{node.op}' does not match input shape {parent.data.shape}"
                )
            key = id(parent)
            if key in pending:
                pending[key] = pending[key] + pg
            else:
                pending[key] = pg
        node._parents = ()
        node._grad_fn = None


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None
