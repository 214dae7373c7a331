"""Flat view over a model's parameter tensors."""
from __future__ import annotations

from typing import Iterable, Iterator

import numpy as np

from . import ops
from .tensor import Graph, Tensor, as_tensor


class ParamVector:
    """Ordered parameter segments treated as one long vector."""

    __slots__ = ("segments",)

    def __init__(self, segments: Iterable):
        self.segments = [as_tensor(s) for s in segments]

    @classmethod
    def from_arrays(cls, arrays: Iterable[np.ndarray]) -> "ParamVector":
        return cls(Tensor(np.array(a, dtype=np.float64)) for a in arrays)

    @classmethod
    def zeros_like(cls, other: "ParamVector") -> "ParamVector":
        return cls(Tensor(np.zeros(s.shape)) for s in other.segments)

    @classmethod
    def from_flat(cls, flat: np.ndarray, shapes) -> "ParamVector":
        flat = np.asarray(flat, dtype=np.float64)
        sizes = [int(np.prod(s)) for s in shapes]
        if flat.size != sum(sizes):
            raise ValueError(f"from_flat: {flat.size} values for shapes totalling {sum(sizes)}")
        parts = np.split(flat, np.cumsum(sizes)[:-1])
        return cls.from_arrays(p.reshape(s) for p, s in zip(parts, shapes))

    def __len__(self) -> int:
        return len(self.segments)

    def __iter__(self) -> Iterator[Tensor]:
        return iter(self.segments)

    def __getitem__(self, i: int) -> Tensor:
        return self.segments[i]

    @property
    def shapes(self) -> list[tuple]:
        return [s.shape for s in self.segments]

    @property
    def total_len(self) -> int:
        return sum(s.size for s in self.segments)

    def arrays(self) -> list[np.ndarray]:
        return [s.data for s in self.segments]

    def flat(self) -> np.ndarray:
        if not self.segments:
            return np.zeros(0)
        return np.concatenate([s.data.ravel() for s in self.segments])

    def detach(self) -> "ParamVector":
        return ParamVector(Tensor(s.data) for s in self.segments)

    def on(self, graph: Graph) -> "ParamVector":
        """Copy the values in as fresh leaves of ``graph``."""
        return ParamVector(graph.param(s.data) for s in self.segments)

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(s.data)) for s in self.segments)

    def __repr__(self):
        return f"ParamVector(n_segments={len(self)}, total_len={self.total_len})"


def _check_compatible(op: str, a: ParamVector, b: ParamVector):
    if a.shapes != b.shapes:
        raise ValueError(f"{op}: segment shapes differ: {a.shapes} vs {b.shapes}")


def dot(a: ParamVector, b: ParamVector) -> float:
    """Sum of elementwise products over every segment (values only)."""
    _check_compatible("dot", a, b)
    total = 0.0
    for x, y in zip(a.segments, b.segments):
        total += float(np.dot(x.data.ravel(), y.data.ravel()))
    return total


def axpy(a: float, x: ParamVector, y: ParamVector) -> ParamVector:
    """``y + a * x``; recorded on the graph when either side is tracked."""
    _check_compatible("axpy", x, y)
    return ParamVector(ops.add(yi, ops.scale(xi, a)) for xi, yi in zip(x.segments, y.segments))
