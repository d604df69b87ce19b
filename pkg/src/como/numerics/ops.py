"""Differentiable operations.

Each function computes its forward value with numpy and registers a closure
returning the gradient for every input.  Binary elementwise operations
broadcast only across singleton dimensions of equal-rank operands (or a
0-d operand).
"""

from __future__ import annotations

import numpy as np

from ..errors import DimensionError
from .tensor import Tensor, as_tensor, make_result

EPS_STAT = 1e-5
LEAKY_SLOPE = 0.2


# -- broadcasting helpers -----------------------------------------------------

def _broadcast_shape(a: tuple, b: tuple, op: str) -> tuple:
    if a == b:
        return a
    if len(a) == 0:
        return b
    if len(b) == 0:
        return a
    if len(a) != len(b):
        raise DimensionError(f"{op}: rank mismatch between shapes {a} and {b}")
    out = []
    for da, db in zip(a, b):
        if da == db or db == 1:
            out.append(da)
        elif da == 1:
            out.append(db)
        else:
            raise DimensionError(f"{op}: cannot broadcast shapes {a} and {b}")
    return tuple(out)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    if len(shape) == 0:
        return np.asarray(g.sum(), dtype=g.dtype)
    axes = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
    return g.sum(axis=axes, keepdims=True)


def _const_like(value, ref: Tensor) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=ref.dtype), op="const")


# -- elementwise arithmetic ---------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape(a.shape, b.shape, "add")
    sa, sb = a.shape, b.shape
    return make_result(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape(a.shape, b.shape, "sub")
    sa, sb = a.shape, b.shape
    return make_result(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)), "sub")


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape(a.shape, b.shape, "mul")
    ad, bd = a.data, b.data

    def grad_fn(g):
        return (
            _unbroadcast(g * bd, ad.shape) if a.requires_grad else None,
            _unbroadcast(g * ad, bd.shape) if b.requires_grad else None,
        )

    return make_result(ad * bd, (a, b), grad_fn, "mul")


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape(a.shape, b.shape, "div")
    ad, bd = a.data, b.data
    out = ad / bd

    def grad_fn(g):
        return (
            _unbroadcast(g / bd, ad.shape) if a.requires_grad else None,
            _unbroadcast(-g * out / bd, bd.shape) if b.requires_grad else None,
        )

    return make_result(out, (a, b), grad_fn, "div")


def _pair(a, b):
    if isinstance(a, Tensor):
        return a, _const_like(b, a)
    b = as_tensor(b)
    return _const_like(a, b), b


def scale(x: Tensor, s: float) -> Tensor:
    s = float(s)
    return make_result(x.data * x.data.dtype.type(s), (x,), lambda g: (g * g.dtype.type(s),), "scale")


def neg(x: Tensor) -> Tensor:
    return scale(x, -1.0)


def abs(x: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    d = x.data
    return make_result(np.abs(d), (x,), lambda g: (g * np.sign(d),), "abs")


def square(x: Tensor) -> Tensor:
    d = x.data
    return make_result(d * d, (x,), lambda g: (2 * g * d,), "square")


def sqrt(x: Tensor) -> Tensor:
    out = np.sqrt(x.data)

    def grad_fn(g):
        # infinite slope at 0 surfaces as a NumericError from backward
        with np.errstate(divide="ignore", invalid="ignore"):
            return (g / (2 * out),)

    return make_result(out, (x,), grad_fn, "sqrt")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return make_result(x.data * mask, (x,), lambda g: (g * mask,), "relu")


def leaky_relu(x: Tensor, slope: float = LEAKY_SLOPE) -> Tensor:
    d = x.data
    factor = np.where(d > 0, d.dtype.type(1), d.dtype.type(slope))
    return make_result(d * factor, (x,), lambda g: (g * factor,), "leaky_relu")


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    return make_result(out, (x,), lambda g: (g * (1 - out * out),), "tanh")


def sigmoid(x: Tensor) -> Tensor:
    out = 1.0 / (1.0 + np.exp(-x.data))
    out = out.astype(x.dtype, copy=False)
    return make_result(out, (x,), lambda g: (g * out * (1 - out),), "sigmoid")


# -- reductions ---------------------------------------------------------------

def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    axes = _norm_axis(axis, x.ndim)
    shape = x.shape
    out = x.data.sum(axis=axes, keepdims=keepdims)

    def grad_fn(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, shape).copy(),)

    return make_result(np.asarray(out, dtype=x.dtype), (x,), grad_fn, "sum")


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axis(axis, x.ndim)
    count = int(np.prod([x.shape[a] for a in axes])) if axes else 1
    shape = x.shape
    out = x.data.mean(axis=axes, keepdims=keepdims)

    def grad_fn(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / g.dtype.type(count), shape).copy(),)

    return make_result(np.asarray(out, dtype=x.dtype), (x,), grad_fn, "mean")


def l1_distance(a, b) -> Tensor:
    """Mean absolute difference over all elements."""
    a, b = _pair(a, b)
    if a.shape != b.shape:
        raise DimensionError(f"l1_distance: shapes {a.shape} and {b.shape} differ")
    diff = a.data - b.data
    n = diff.dtype.type(diff.size)

    def grad_fn(g):
        s = np.sign(diff) * (g / n)
        return (s if a.requires_grad else None, -s if b.requires_grad else None)

    return make_result(np.asarray(np.abs(diff).mean(), dtype=diff.dtype), (a, b), grad_fn, "l1_distance")


def l2_distance(a, b) -> Tensor:
    """Mean squared difference over all elements."""
    a, b = _pair(a, b)
    if a.shape != b.shape:
        raise DimensionError(f"l2_distance: shapes {a.shape} and {b.shape} differ")
    diff = a.data - b.data
    n = diff.dtype.type(diff.size)

    def grad_fn(g):
        s = diff * (2 * g / n)
        return (s if a.requires_grad else None, -s if b.requires_grad else None)

    return make_result(np.asarray((diff * diff).mean(), dtype=diff.dtype), (a, b), grad_fn, "l2_distance")


# -- shape manipulation -------------------------------------------------------

def reshape(x: Tensor, shape) -> Tensor:
    old = x.shape
    return make_result(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),), "reshape")


def concat(tensors, axis: int = 1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.ndim != len(ref) or any(
            d1 != d2 for i, (d1, d2) in enumerate(zip(ref, t.shape)) if i != axis % len(ref)
        ):
            raise DimensionError(f"concat: shapes {ref} and {t.shape} disagree off axis {axis}")
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def grad_fn(g):
        idx = [slice(None)] * g.ndim
        out = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            idx[axis] = slice(lo, hi)
            out.append(g[tuple(idx)])
        return tuple(out)

    return make_result(np.concatenate([t.data for t in tensors], axis=axis), tensors, grad_fn, "concat")


def upsample2x(x: Tensor) -> Tensor:
    """Nearest-neighbour upsampling by 2 on the two trailing axes."""
    if x.ndim != 4:
        raise DimensionError(f"upsample2x expects NCHW, got {x.shape}")
    n, c, h, w = x.shape
    out = np.broadcast_to(x.data[:, :, :, None, :, None], (n, c, h, 2, w, 2)).reshape(n, c, 2 * h, 2 * w)
    return make_result(out, (x,), lambda g: (g.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5)),), "upsample2x")


def avgpool2(x: Tensor) -> Tensor:
    """Stride-2 2x2 average downsampling."""
    if x.ndim != 4 or x.shape[2] % 2 or x.shape[3] % 2:
        raise DimensionError(f"avgpool2 expects NCHW with even spatial extents, got {x.shape}")
    n, c, h, w = x.shape
    out = x.data.reshape(n, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))

    def grad_fn(g):
        g4 = g / g.dtype.type(4)
        return (np.broadcast_to(g4[:, :, :, None, :, None], (n, c, h // 2, 2, w // 2, 2)).reshape(n, c, h, w).copy(),)

    return make_result(out, (x,), grad_fn, "avgpool2")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    ad, bd = a.data, b.data

    def grad_fn(g):
        return (g @ bd.T if a.requires_grad else None, ad.T @ g if b.requires_grad else None)

    return make_result(ad @ bd, (a, b), grad_fn, "matmul")


# -- convolution --------------------------------------------------------------

def conv_output_size(size: int, k: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - k) // stride + 1


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation of an NCHW input with an OIkk kernel, zero padding."""
    if x.ndim != 4 or kernel.ndim != 4:
        raise DimensionError(f"conv2d expects NCHW input and OIkk kernel, got {x.shape} and {kernel.shape}")
    n, c, h, w = x.shape
    o, ci, kh, kw = kernel.shape
    if ci != c or kh != kw:
        raise DimensionError(f"conv2d: input {x.shape} incompatible with kernel {kernel.shape}")
    if stride < 1 or padding < 0:
        raise DimensionError(f"conv2d: invalid stride {stride} / padding {padding}")
    k = kh
    ho, wo = conv_output_size(h, k, stride, padding), conv_output_size(w, k, stride, padding)
    if ho < 1 or wo < 1:
        raise DimensionError(f"conv2d: kernel {kernel.shape} larger than padded input {x.shape}")
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    span_h, span_w = (ho - 1) * stride + 1, (wo - 1) * stride + 1
    # columns laid out as (N, C, k, k, Ho, Wo) so the matmul output is already NCHW
    cols = np.empty((n, c, k, k, ho, wo), dtype=xp.dtype)
    for i in range(k):
        for j in range(k):
            cols[:, :, i, j] = xp[:, :, i : i + span_h : stride, j : j + span_w : stride]
    cols = cols.reshape(n, c * k * k, ho * wo)
    wmat = kernel.data.reshape(o, c * k * k)
    out = np.matmul(wmat, cols)
    if bias is not None:
        out += bias.data.reshape(1, o, 1)
    result = out.reshape(n, o, ho, wo)
    hp, wp = xp.shape[2], xp.shape[3]

    def grad_fn(g):
        g3 = g.reshape(n, o, ho * wo)
        gx = gk = gb = None
        if x.requires_grad:
            dcols = np.matmul(wmat.T, g3).reshape(n, c, k, k, ho, wo)
            dxp = np.zeros((n, c, hp, wp), dtype=g.dtype)
            for i in range(k):
                for j in range(k):
                    dxp[:, :, i : i + span_h : stride, j : j + span_w : stride] += dcols[:, :, i, j]
            gx = dxp[:, :, padding : padding + h, padding : padding + w] if padding else dxp
        if kernel.requires_grad:
            # per-sample GEMMs accumulate into one buffer; avoids a batched temporary
            acc = g3[0] @ cols[0].T
            for b in range(1, n):
                acc += g3[b] @ cols[b].T
            gk = acc.reshape(kernel.shape)
        if bias is not None and bias.requires_grad:
            gb = g3.sum(axis=(0, 2)).reshape(bias.shape)
        return (gx, gk, gb) if bias is not None else (gx, gk)

    parents = (x, kernel, bias) if bias is not None else (x, kernel)
    return make_result(result, parents, grad_fn, "conv2d")


# -- instance statistics --------------------------------------------------------

def _check_nchw(x: Tensor, op: str):
    if x.ndim != 4:
        raise DimensionError(f"{op} expects an NCHW tensor, got shape {x.shape}")


def instance_mean(x: Tensor) -> Tensor:
    _check_nchw(x, "instance_mean")
    return mean(x, axis=(2, 3), keepdims=True)


def instance_std(x: Tensor, eps: float = EPS_STAT) -> Tensor:
    """Per-(instance, channel) population std, reported as sqrt(var + eps)."""
    _check_nchw(x, "instance_std")
    centered = x.data - x.data.mean(axis=(2, 3), keepdims=True)
    hw = x.shape[2] * x.shape[3]
    std = np.sqrt((centered * centered).mean(axis=(2, 3), keepdims=True) + x.dtype.type(eps))
    return make_result(std, (x,), lambda g: (g * centered / (hw * std),), "instance_std")


def instance_stats(x: Tensor, eps: float = EPS_STAT):
    return instance_mean(x), instance_std(x, eps)


def standardize(x: Tensor, eps: float = EPS_STAT) -> Tensor:
    """(x - mean) / std per instance and channel, fused for speed."""
    _check_nchw(x, "standardize")
    d = x.data
    centered = d - d.mean(axis=(2, 3), keepdims=True)
    std = np.sqrt((centered * centered).mean(axis=(2, 3), keepdims=True) + d.dtype.type(eps))
    y = centered / std

    def grad_fn(g):
        gm = g.mean(axis=(2, 3), keepdims=True)
        gy = (g * y).mean(axis=(2, 3), keepdims=True)
        return ((g - gm - y * gy) / std,)

    return make_result(y, (x,), grad_fn, "standardize")


# -- classification -------------------------------------------------------------

def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under softmax(logits)."""
    if logits.ndim != 2 or len(labels) != logits.shape[0]:
        raise DimensionError(f"cross_entropy: logits {logits.shape} vs labels {np.shape(labels)}")
    labels = np.asarray(labels, dtype=np.int64)
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    n = logits.shape[0]
    loss = -logp[np.arange(n), labels].mean()

    def grad_fn(g):
        p = np.exp(logp)
        p[np.arange(n), labels] -= 1
        return (p * (g / n),)

    return make_result(np.asarray(loss, dtype=logits.dtype), (logits,), grad_fn, "cross_entropy")


def broadcast_to(x: Tensor, shape) -> Tensor:
    """Expand singleton dimensions of ``x`` to ``shape``."""
    shape = tuple(shape)
    if _broadcast_shape(x.shape, shape, "broadcast_to") != shape:
        raise DimensionError(f"broadcast_to: cannot expand {x.shape} to {shape}")
    src = x.shape
    out = np.broadcast_to(x.data, shape).copy()
    return make_result(out, (x,), lambda g: (_unbroadcast(g, src),), "broadcast_to")
