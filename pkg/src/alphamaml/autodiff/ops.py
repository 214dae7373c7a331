"""Differentiable primitives.

Each primitive computes its value eagerly and, if any input is tracked and
its graph is recording, appends a node whose vjp is built from primitives.
"""
from __future__ import annotations

import numpy as np

from . import kernels
from .tensor import Graph, Tensor, as_tensor


def _graph_of(*ts: Tensor) -> Graph | None:
    graph = None
    for t in ts:
        if t.node is None:
            continue
        if graph is None:
            graph = t.graph
        elif t.graph is not graph:
            raise ValueError("operands belong to different graphs")
    if graph is not None and not graph.recording:
        return None
    return graph


def _emit(op: str, data: np.ndarray, inputs: tuple, vjp) -> Tensor:
    graph = _graph_of(*inputs)
    if graph is None:
        return Tensor(data)
    return graph.record(op, data, inputs, vjp)


def _shape_error(op: str, a, b) -> ValueError:
    return ValueError(f"{op}: incompatible shapes {tuple(a)} and {tuple(b)}")


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> tuple:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise _shape_error(op, a.shape, b.shape) from None


# ---------------------------------------------------------------- shape ops

def sum_to(g: Tensor, shape: tuple) -> Tensor:
    """Reduce a broadcast gradient back to ``shape``."""
    shape = tuple(shape)
    if g.shape == shape:
        return g
    lead = g.ndim - len(shape)
    axes = tuple(range(lead)) + tuple(
        lead + i for i, n in enumerate(shape) if n == 1 and g.shape[lead + i] != 1
    )
    out = sum(g, axis=axes, keepdims=True)
    return reshape(out, shape)


def broadcast_to(a, shape: tuple) -> Tensor:
    a = as_tensor(a)
    shape = tuple(shape)
    if a.shape == shape:
        return a
    data = np.broadcast_to(a.data, shape).copy()

    def vjp(g, needed):
        return (sum_to(g, a.shape),)

    return _emit("broadcast_to", data, (a,), vjp)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    src = a.shape
    try:
        data = a.data.reshape(shape)
    except ValueError:
        raise _shape_error("reshape", src, shape) from None

    def vjp(g, needed):
        return (reshape(g, src),)

    return _emit("reshape", data, (a,), vjp)


def transpose(a, axes) -> Tensor:
    a = as_tensor(a)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    data = a.data.transpose(axes)

    def vjp(g, needed):
        return (transpose(g, inv),)

    return _emit("transpose", data, (a,), vjp)


def sum(a, axis=None, keepdims=False) -> Tensor:  # noqa: A001 - mirrors numpy
    a = as_tensor(a)
    src = a.shape
    if axis is None:
        axis = tuple(range(a.ndim))
    elif isinstance(axis, int):
        axis = (axis,)
    axis = tuple(ax % a.ndim for ax in axis) if a.ndim else ()
    data = np.sum(a.data, axis=axis, keepdims=keepdims)
    kshape = tuple(1 if i in axis else n for i, n in enumerate(src))

    def vjp(g, needed):
        return (broadcast_to(reshape(g, kshape), src),)

    return _emit("sum", np.asarray(data, dtype=np.float64), (a,), vjp)


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    s = sum(a, axis=axis, keepdims=keepdims)
    n = a.size // max(s.size, 1)
    return scale(s, 1.0 / n)


def index_select(a, index) -> Tensor:
    """Gather ``a.ravel()[index]``; output has the shape of ``index``."""
    a = as_tensor(a)
    index = np.asarray(index, dtype=np.intp)
    if index.size and (index.min() < 0 or index.max() >= a.size):
        raise IndexError(f"index_select: index out of range for size {a.size}")
    src = a.shape
    data = a.data.reshape(-1)[index]

    def vjp(g, needed):
        return (reshape(scatter_add(g, index, int(np.prod(src))), src),)

    return _emit("index_select", data, (a,), vjp)


def scatter_add(g, index, size: int) -> Tensor:
    """Adjoint of :func:`index_select`: a flat vector of ``size`` with ``g`` added at ``index``."""
    g = as_tensor(g)
    index = np.asarray(index, dtype=np.intp)
    if g.shape != index.shape:
        raise _shape_error("scatter_add", g.shape, index.shape)
    data = np.bincount(index.reshape(-1), weights=g.data.reshape(-1), minlength=size)

    def vjp(gg, needed):
        return (index_select(gg, index),)

    return _emit("scatter_add", data.astype(np.float64), (g,), vjp)


# ---------------------------------------------------------------- arithmetic

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a, b)
    data = a.data + b.data

    def vjp(g, needed):
        return (sum_to(g, a.shape) if needed[0] else None,
                sum_to(g, b.shape) if needed[1] else None)

    return _emit("add", data, (a, b), vjp)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("sub", a, b)
    data = a.data - b.data

    def vjp(g, needed):
        return (sum_to(g, a.shape) if needed[0] else None,
                sum_to(scale(g, -1.0), b.shape) if needed[1] else None)

    return _emit("sub", data, (a, b), vjp)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("mul", a, b)
    data = a.data * b.data

    def vjp(g, needed):
        return (sum_to(mul(g, b), a.shape) if needed[0] else None,
                sum_to(mul(g, a), b.shape) if needed[1] else None)

    return _emit("mul", data, (a, b), vjp)


def scale(a, c: float) -> Tensor:
    """Multiply by a constant Python scalar."""
    a = as_tensor(a)
    c = float(c)
    data = a.data * c

    def vjp(g, needed):
        return (scale(g, c),)

    return _emit("scale", data, (a,), vjp)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise _shape_error("matmul", a.shape, b.shape)
    data = a.data @ b.data

    def vjp(g, needed):
        return (matmul(g, transpose(b, (1, 0))) if needed[0] else None,
                matmul(transpose(a, (1, 0)), g) if needed[1] else None)

    return _emit("matmul", data, (a, b), vjp)


def power(a, p: float) -> Tensor:
    a = as_tensor(a)
    p = float(p)
    data = np.power(a.data, p)

    def vjp(g, needed):
        return (mul(g, scale(power(a, p - 1.0), p)),)

    return _emit("power", data, (a,), vjp)


def exp(a) -> Tensor:
    a = as_tensor(a)
    data = np.exp(a.data)
    holder = []

    def vjp(g, needed):
        return (mul(g, holder[0]),)

    out = _emit("exp", data, (a,), vjp)
    holder.append(out)
    return out


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = (a.data > 0).astype(np.float64)
    data = a.data * mask

    def vjp(g, needed):
        # the mask is piecewise constant, so it enters higher orders as a constant
        return (mul(g, Tensor(mask)),)

    return _emit("relu", data, (a,), vjp)


def logsumexp(a, axis: int = -1) -> Tensor:
    """Stable log-sum-exp along ``axis`` with the reduced axis kept."""
    a = as_tensor(a)
    m = np.max(a.data, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    data = m + np.log(np.sum(np.exp(a.data - m), axis=axis, keepdims=True))
    holder = []

    def vjp(g, needed):
        soft = exp(sub(a, holder[0]))
        return (mul(broadcast_to(g, a.shape), soft),)

    out = _emit("logsumexp", data, (a,), vjp)
    holder.append(out)
    return out


# ---------------------------------------------------------------- convolution

def im2col(x, kh: int, kw: int, stride: int, pad: int) -> Tensor:
    x = as_tensor(x)
    if x.ndim != 4:
        raise ValueError(f"im2col: expected a 4-d input, got shape {x.shape}")
    B, C, H, W = x.shape
    data = kernels.im2col(np.ascontiguousarray(x.data), kh, kw, stride, pad)

    def vjp(g, needed):
        return (col2im(g, (B, C, H, W), kh, kw, stride, pad),)

    return _emit("im2col", data, (x,), vjp)


def col2im(cols, x_shape, kh: int, kw: int, stride: int, pad: int) -> Tensor:
    cols = as_tensor(cols)
    B, C, H, W = x_shape
    data = kernels.col2im(np.ascontiguousarray(cols.data), B, C, H, W, kh, kw, stride, pad)

    def vjp(g, needed):
        return (im2col(g, kh, kw, stride, pad),)

    return _emit("col2im", data, (cols,), vjp)


# ---------------------------------------------------------------- composites

def conv2d(x, w, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of NCHW ``x`` with ``w`` of shape (F, C, kh, kw)."""
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[1]:
        raise _shape_error("conv2d", x.shape, w.shape)
    B, _, H, W = x.shape
    F, C, kh, kw = w.shape
    Ho = (H + 2 * padding - kh) // stride + 1
    Wo = (W + 2 * padding - kw) // stride + 1
    if Ho < 1 or Wo < 1:
        raise _shape_error("conv2d", x.shape, w.shape)
    cols = im2col(x, kh, kw, stride, padding)
    out = matmul(cols, transpose(reshape(w, (F, C * kh * kw)), (1, 0)))
    return transpose(reshape(out, (B, Ho, Wo, F)), (0, 3, 1, 2))


def batchnorm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Batch normalisation with the current batch's statistics.

    Statistics are taken over every axis except axis 1 (channels/features).
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    axes = (0,) + tuple(range(2, x.ndim))
    pshape = (1, x.shape[1]) + (1,) * (x.ndim - 2)
    mu = mean(x, axis=axes, keepdims=True)
    xc = sub(x, mu)
    var = mean(mul(xc, xc), axis=axes, keepdims=True)
    xhat = mul(xc, power(add(var, eps), -0.5))
    return add(mul(xhat, reshape(gamma, pshape)), reshape(beta, pshape))


def log_softmax(logits, axis: int = -1) -> Tensor:
    logits = as_tensor(logits)
    return sub(logits, logsumexp(logits, axis=axis))
