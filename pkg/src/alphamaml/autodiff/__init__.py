"""Reverse-mode autodiff with higher-order gradients over numpy arrays."""
from . import ops
from .kernels import BACKEND
from .ops import (add, batchnorm, conv2d, exp, index_select, log_softmax, logsumexp, matmul,
                  mean, mul, power, relu, reshape, scale, sub, sum, transpose)
from .paramvec import ParamVector, axpy, dot
from .tensor import Graph, Node, Tensor, as_tensor, grad

PRIMITIVES = {
    "add": ops.add,
    "sub": ops.sub,
    "mul": ops.mul,
    "matmul": ops.matmul,
    "conv2d": ops.conv2d,
    "relu": ops.relu,
    "batchnorm": ops.batchnorm,
    "softmax_logsumexp": ops.log_softmax,
    "reshape": ops.reshape,
    "mean": ops.mean,
    "sum": ops.sum,
    "index_select": ops.index_select,
}


def record(graph: Graph, primitive: str, inputs, **kwargs) -> Tensor:
    """Apply a named primitive to ``inputs``, which must all live on ``graph``.

    Untracked inputs are adopted as leaves of ``graph``.
    """
    try:
        fn = PRIMITIVES[primitive]
    except KeyError:
        raise ValueError(f"unknown primitive {primitive!r}") from None
    args = []
    for t in inputs:
        t = as_tensor(t)
        if t.node is None:
            t = graph.param(t.data)
        elif t.graph is not graph:
            raise ValueError(f"{primitive}: input belongs to another graph")
        args.append(t)
    return fn(*args, **kwargs)


def backward(output: Tensor, wrt, create_graph: bool = False):
    """Gradient of a scalar ``output`` w.r.t. a ParamVector (or list of tensors)."""
    if isinstance(wrt, ParamVector):
        return ParamVector(grad(output, wrt.segments, create_graph=create_graph))
    return grad(output, list(wrt), create_graph=create_graph)


__all__ = [
    "BACKEND", "Graph", "Node", "Tensor", "ParamVector", "PRIMITIVES",
    "as_tensor", "axpy", "backward", "dot", "grad", "record", "ops",
    "add", "sub", "mul", "scale", "matmul", "conv2d", "relu", "batchnorm", "log_softmax",
    "logsumexp", "reshape", "transpose", "mean", "sum", "index_select", "exp", "power",
]
