"""Functional models: parameters are passed in, never stored.

``forward(spec, params, inputs)`` works the same for the meta-parameters and
for adapted copies of them, which is what the inner loop needs.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import ParamVector, Tensor, ops
from .autodiff.tensor import as_tensor

CONV_FILTERS = 64
CONV_BLOCKS = 4
IMAGE_SIZE = 28
INIT_STD = 0.02

MODEL_KINDS = ("convnet4", "mlp")
LOSS_KINDS = ("cross_entropy", "mse")


@dataclass(frozen=True)
class ModelSpec:
    kind: str
    n_outputs: int
    hidden: tuple = field(default=(40, 40))
    seed: int = 0
    input_dim: int = 1  # mlp only

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ValueError(f"unsupported model kind {self.kind!r}; expected one of {MODEL_KINDS}")
        if self.n_outputs < 1:
            raise ValueError("n_outputs must be positive")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))

    def to_dict(self) -> dict:
        return {"kind": self.kind, "n_outputs": self.n_outputs, "hidden": list(self.hidden),
                "seed": self.seed, "input_dim": self.input_dim}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        return cls(kind=d["kind"], n_outputs=int(d["n_outputs"]), hidden=tuple(d.get("hidden", ())),
                   seed=int(d.get("seed", 0)), input_dim=int(d.get("input_dim", 1)))


def _truncated_normal(rng: np.random.Generator, shape, std: float) -> np.ndarray:
    """Normal samples redrawn until they fall within two standard deviations."""
    out = rng.normal(0.0, std, size=shape)
    bad = np.abs(out) > 2 * std
    while bad.any():
        out[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(out) > 2 * std
    return out


def param_layout(spec: ModelSpec) -> list[tuple[str, tuple]]:
    """Names and shapes of the parameter segments, in ParamVector order."""
    layout = []
    if spec.kind == "convnet4":
        c_in = 1
        for b in range(CONV_BLOCKS):
            layout += [
                (f"conv{b}.weight", (CONV_FILTERS, c_in, 3, 3)),
                (f"bn{b}.scale", (CONV_FILTERS,)),
                (f"bn{b}.shift", (CONV_FILTERS,)),
            ]
            c_in = CONV_FILTERS
        layout += [("head.weight", (CONV_FILTERS, spec.n_outputs)), ("head.bias", (spec.n_outputs,))]
    else:
        sizes = [spec.input_dim, *spec.hidden, spec.n_outputs]
        for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
            layout += [(f"fc{i}.weight", (a, b)), (f"fc{i}.bias", (b,))]
    return layout


def init(spec: ModelSpec) -> ParamVector:
    rng = np.random.default_rng(spec.seed)
    arrays = []
    for name, shape in param_layout(spec):
        if name.endswith("weight"):
            arrays.append(_truncated_normal(rng, shape, INIT_STD))
        elif name.endswith("scale"):
            arrays.append(np.ones(shape))
        else:
            arrays.append(np.zeros(shape))
    return ParamVector.from_arrays(arrays)


def _check_input(spec: ModelSpec, x: Tensor):
    if spec.kind == "convnet4":
        expected = ("B", 1, IMAGE_SIZE, IMAGE_SIZE)
        ok = x.ndim == 4 and x.shape[1:] == expected[1:]
    else:
        expected = ("B", spec.input_dim)
        ok = x.ndim == 2 and x.shape[1] == spec.input_dim
    if not ok:
        raise ValueError(f"{spec.kind}: expected input shape {expected}, got {x.shape}")


def forward(spec: ModelSpec, params: ParamVector, inputs) -> Tensor:
    """Logits (convnet4) or predictions (mlp), shape (B, n_outputs)."""
    x = as_tensor(inputs)
    _check_input(spec, x)
    p = params.segments
    if len(p) != len(param_layout(spec)):
        raise ValueError(f"{spec.kind}: expected {len(param_layout(spec))} parameter segments, got {len(p)}")
    if spec.kind == "convnet4":
        for b in range(CONV_BLOCKS):
            w, gamma, beta = p[3 * b: 3 * b + 3]
            x = ops.conv2d(x, w, stride=2, padding=1)
            x = ops.relu(ops.batchnorm(x, gamma, beta))
        # 2x2 spatial map -> 64 features
        feat = ops.mean(x, axis=(2, 3))
        return ops.add(ops.matmul(feat, p[-2]), p[-1])
    n_layers = len(p) // 2
    for i in range(n_layers):
        x = ops.add(ops.matmul(x, p[2 * i]), p[2 * i + 1])
        if i < n_layers - 1:
            x = ops.relu(x)
    return x


def loss(kind: str, outputs: Tensor, targets) -> Tensor:
    """Batch-mean loss as a 0-d tensor."""
    targets = np.asarray(targets)
    if outputs.shape[0] != targets.shape[0]:
        raise ValueError(f"loss: batch sizes differ ({outputs.shape[0]} vs {targets.shape[0]})")
    if kind == "cross_entropy":
        n, k = outputs.shape
        labels = targets.astype(np.intp).reshape(-1)
        if labels.size and (labels.min() < 0 or labels.max() >= k):
            raise ValueError(f"cross_entropy: class index out of range for {k} outputs")
        logp = ops.log_softmax(outputs, axis=1)
        picked = ops.index_select(logp, np.arange(n) * k + labels)
        return ops.scale(ops.mean(picked), -1.0)
    if kind == "mse":
        diff = ops.sub(outputs, Tensor(targets.reshape(outputs.shape).astype(np.float64)))
        return ops.mean(ops.mul(diff, diff))
    raise ValueError(f"unsupported loss kind {kind!r}; expected one of {LOSS_KINDS}")


@dataclass(frozen=True)
class Learner:
    """A model paired with its loss; the unit the meta-learners operate on."""

    spec: ModelSpec
    loss_kind: str

    def init(self) -> ParamVector:
        return init(self.spec)

    def forward(self, params: ParamVector, inputs) -> Tensor:
        return forward(self.spec, params, inputs)

    def loss(self, params: ParamVector, inputs, targets) -> Tensor:
        return loss(self.loss_kind, forward(self.spec, params, inputs), targets)
