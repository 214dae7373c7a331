"""Tape-based reverse-mode autodiff over float64 numpy arrays.

Every recorded primitive stores a vector-Jacobian product written in terms of
other primitives, so running ``backward`` with ``create_graph=True`` records
the gradient computation on the same tape and it can be differentiated again.
"""
from __future__ import annotations

from contextlib import contextmanager
from typing import Callable, Sequence

import numpy as np


class Node:
    __slots__ = ("index", "op", "inputs", "vjp")

    def __init__(self, index: int, op: str, inputs: tuple, vjp: Callable | None):
        self.index = index
        self.op = op
        self.inputs = inputs
        self.vjp = vjp

    def __repr__(self):
        return f"Node({self.index}, {self.op!r})"


class Graph:
    """Append-only tape of primitive records.

    Nodes are appended in execution order, so the tape is always
    topologically sorted. A graph is meant to be used from one thread.
    """

    def __init__(self):
        self.nodes: list[Node] = []
        self.recording = True

    def __len__(self):
        return len(self.nodes)

    def param(self, value) -> "Tensor":
        """Register ``value`` as a leaf that gradients can be taken against."""
        data = np.array(value, dtype=np.float64)
        node = Node(len(self.nodes), "leaf", (), None)
        self.nodes.append(node)
        return Tensor(data, self, node)

    def record(self, op: str, data: np.ndarray, inputs: Sequence["Tensor"], vjp) -> "Tensor":
        node = Node(len(self.nodes), op, tuple(inputs), vjp)
        self.nodes.append(node)
        return Tensor(data, self, node)

    @contextmanager
    def no_record(self):
        prev = self.recording
        self.recording = False
        try:
            yield
        finally:
            self.recording = prev


class Tensor:
    """A dense float64 array, optionally attached to a :class:`Graph`."""

    __slots__ = ("data", "graph", "node")
    __array_priority__ = 100

    def __init__(self, data, graph: Graph | None = None, node: Node | None = None):
        self.data = data if isinstance(data, np.ndarray) and data.dtype == np.float64 \
            else np.asarray(data, dtype=np.float64)
        self.graph = graph
        self.node = node

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def tracked(self) -> bool:
        return self.node is not None

    def item(self) -> float:
        return float(self.data.item())

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        tag = f", node={self.node.index}" if self.node is not None else ""
        return f"Tensor(shape={self.shape}{tag})"

    # operator sugar; definitions live in ops
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    def __radd__(self, other):
        from . import ops
        return ops.add(other, self)

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        if isinstance(other, (int, float)):
            return ops.scale(self, float(other))
        return ops.mul(self, other)

    def __rmul__(self, other):
        from . import ops
        if isinstance(other, (int, float)):
            return ops.scale(self, float(other))
        return ops.mul(other, self)

    def __truediv__(self, other):
        from . import ops
        if isinstance(other, (int, float)):
            return ops.scale(self, 1.0 / other)
        return ops.mul(self, ops.power(other, -1.0))

    def __neg__(self):
        from . import ops
        return ops.scale(self, -1.0)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)

    def __pow__(self, p):
        from . import ops
        return ops.power(self, float(p))

    def reshape(self, *shape):
        from . import ops
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def sum(self, axis=None, keepdims=False):
        from . import ops
        return ops.sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        from . import ops
        return ops.mean(self, axis=axis, keepdims=keepdims)

    @property
    def T(self):
        from . import ops
        return ops.transpose(self, tuple(reversed(range(self.ndim))))


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _requires(graph: Graph, out_index: int, targets: set[int]) -> list[bool]:
    """Mark nodes on a path from any target to the output."""
    req = [False] * (out_index + 1)
    nodes = graph.nodes
    for k in range(out_index + 1):
        if k in targets:
            req[k] = True
            continue
        for inp in nodes[k].inputs:
            n = inp.node
            if n is not None and req[n.index]:
                req[k] = True
                break
    return req


def grad(output: Tensor, wrt: Sequence[Tensor], create_graph: bool = False) -> list[Tensor]:
    """Gradients of a scalar ``output`` with respect to each tensor in ``wrt``.

    Unreachable targets (or detached ones) receive zero gradients. With
    ``create_graph`` the returned tensors live on the graph and can be
    differentiated again.
    """
    output = as_tensor(output)
    if output.data.ndim != 0:
        raise ValueError(f"backward needs a 0-d output, got shape {output.shape}")
    wrt = list(wrt)
    graph = output.graph
    if graph is None or output.node is None:
        return [Tensor(np.zeros_like(w.data)) for w in wrt]
    for w in wrt:
        if w.graph is not None and w.graph is not graph:
            raise ValueError("backward: a target lives on a different graph")

    out_idx = output.node.index
    targets = {w.node.index for w in wrt if w.node is not None and w.node.index <= out_idx}
    req = _requires(graph, out_idx, targets)
    nodes = graph.nodes
    grads: dict[int, Tensor] = {out_idx: Tensor(np.ones((), dtype=np.float64))}

    from . import ops

    with _recording(graph, create_graph):
        for k in range(out_idx, -1, -1):
            g = grads.get(k)
            if g is None:
                continue
            node = nodes[k]
            if node.vjp is None:
                continue
            if k not in targets:
                # interior targets still propagate further upstream
                del grads[k]
            needed = [inp.node is not None and req[inp.node.index] for inp in node.inputs]
            if not any(needed):
                continue
            in_grads = node.vjp(g, needed)
            for inp, need, ig in zip(node.inputs, needed, in_grads):
                if not need or ig is None:
                    continue
                j = inp.node.index
                prev = grads.get(j)
                grads[j] = ig if prev is None else ops.add(prev, ig)

    out = []
    for w in wrt:
        g = grads.get(w.node.index) if w.node is not None and w.node.index in targets else None
        if g is None:
            g = Tensor(np.zeros_like(w.data))
        elif not create_graph:
            g = Tensor(g.data)
        out.append(g)
    return out


@contextmanager
def _recording(graph: Graph, enabled: bool):
    if enabled:
        yield
    else:
        with graph.no_record():
            yield
