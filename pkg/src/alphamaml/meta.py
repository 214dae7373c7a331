"""MAML and Alpha MAML.

Alpha MAML adapts the two scalar step sizes online. The task learning rate
moves by the dot product between each task's query gradient at the adapted
parameters and its support gradient; the meta learning rate moves by the
dot product between consecutive meta-gradients. Both use gradients the
meta-update already computes, and only the previous meta-gradient is kept
between iterations.
"""
from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .autodiff import Graph, ParamVector, axpy, dot, grad
from .models import Learner
from .tasks import Episode, TaskDistribution, make_batch

ALPHA_SOURCES = ("current", "previous")


class DivergenceError(FloatingPointError):
    """A loss or learning rate became non-finite (or a rate went negative)."""


@dataclass
class MetaConfig:
    alpha0: float = 0.4
    beta0: float = 1e-3
    alpha_hyperlr: float = 0.0
    beta_hyperlr: float = 0.0
    meta_batch_size: int = 8
    n_inner_steps: int = 1
    n_inner_steps_eval: int = 1
    first_order: bool = False
    lr_floor: float | None = None
    alpha_update_source: str = "current"

    def __post_init__(self):
        if not (self.alpha0 > 0 and self.beta0 > 0):
            raise ValueError("alpha0 and beta0 must be positive")
        if self.alpha_hyperlr < 0 or self.beta_hyperlr < 0:
            raise ValueError("hyper learning rates must be non-negative")
        if self.meta_batch_size < 1 or self.n_inner_steps < 1 or self.n_inner_steps_eval < 0:
            raise ValueError("meta_batch_size and n_inner_steps must be at least 1")
        if self.alpha_update_source not in ALPHA_SOURCES:
            raise ValueError(f"alpha_update_source must be one of {ALPHA_SOURCES}")


@dataclass
class MetaState:
    theta: ParamVector
    alpha: float
    beta: float
    prev_meta_grad: ParamVector | None = None
    iter: int = 0
    # only used with alpha_update_source="previous"
    prev_alpha_hypergrad: float | None = None

    @classmethod
    def initial(cls, theta: ParamVector, cfg: MetaConfig) -> "MetaState":
        return cls(theta.detach(), float(cfg.alpha0), float(cfg.beta0))


@dataclass
class StepReport:
    train_loss: float
    meta_loss: float
    alpha_after: float
    beta_after: float
    alpha_hypergrad: float = 0.0
    beta_hypergrad: float = 0.0
    n_tasks: int = 1
    beta_updated: bool = False

    @property
    def mean_meta_loss(self) -> float:
        return self.meta_loss / self.n_tasks


class TaskGrads(NamedTuple):
    theta_prime: ParamVector
    test_grad: ParamVector  # gradient of the query loss at theta_prime
    train_grad: ParamVector  # first support gradient, at theta
    train_loss: float
    test_loss: float


def _finite(x: float, what: str, it: int | None = None) -> float:
    if not math.isfinite(x):
        where = f" at iteration {it}" if it is not None else ""
        raise DivergenceError(f"{what} is not finite{where}: {x}")
    return x


def inner_adapt(learner: Learner, theta: ParamVector, inputs, targets, alpha: float,
                n_steps: int = 1, track_higher_order: bool = True):
    """SGD on the support set starting from ``theta``.

    Returns ``(theta_prime, first_grad, support_loss)`` where ``first_grad``
    is the support gradient at ``theta`` and ``support_loss`` is measured
    before adaptation. With ``track_higher_order`` the steps are recorded so
    ``theta_prime`` is differentiable w.r.t. ``theta`` through the gradients;
    otherwise the gradients enter as constants.
    """
    if n_steps < 1:
        raise ValueError("inner_adapt needs n_steps >= 1")
    params = theta
    first_grad, first_loss = None, None
    for step in range(n_steps):
        loss = learner.loss(params, inputs, targets)
        lv = _finite(loss.item(), f"support loss (inner step {step})")
        g = ParamVector(grad(loss, params.segments, create_graph=track_higher_order))
        if first_grad is None:
            first_grad, first_loss = g.detach(), lv
        params = axpy(-alpha, g, params)
    return params, first_grad, first_loss


def meta_gradient(learner: Learner, theta: ParamVector, episodes: list[Episode], alpha: float,
                  first_order: bool = False, n_steps: int = 1):
    """Gradient of the summed query loss at adapted parameters w.r.t. ``theta``.

    Returns ``(meta_grad, meta_loss, per_task)``. One backward pass per task
    yields both the full meta-gradient and the plain query gradient at the
    adapted parameters.
    """
    if not episodes:
        raise ValueError("meta_gradient needs at least one episode")
    meta_grad, meta_loss, per_task = None, 0.0, []
    n = len(theta)
    for ep in episodes:
        graph = Graph()
        th = theta.on(graph)
        th_p, g_train, l_train = inner_adapt(learner, th, ep.train_inputs, ep.train_targets,
                                             alpha, n_steps, track_higher_order=not first_order)
        test_loss = learner.loss(th_p, ep.test_inputs, ep.test_targets)
        lt = _finite(test_loss.item(), "query loss")
        grads = grad(test_loss, th.segments + th_p.segments)
        full, at_prime = ParamVector(grads[:n]), ParamVector(grads[n:])
        meta_grad = full if meta_grad is None else axpy(1.0, full, meta_grad)
        meta_loss += lt
        per_task.append(TaskGrads(th_p.detach(), at_prime, g_train, l_train, lt))
        del graph, th, th_p, test_loss
    return meta_grad, meta_loss, per_task


def alpha_hypergradient(per_task: list[TaskGrads]) -> float:
    """Sum over tasks of <query grad at theta', support grad at theta>.

    This is the negative derivative of the summed query loss w.r.t. the
    task learning rate, so it is added to alpha.
    """
    if not per_task:
        raise ValueError("alpha_hypergradient needs at least one task")
    return float(sum(dot(t.test_grad, t.train_grad) for t in per_task))


def beta_hypergradient(meta_grad: ParamVector, prev_meta_grad: ParamVector | None) -> float:
    """<current meta-gradient, previous meta-gradient>, added to beta."""
    if prev_meta_grad is None:
        raise ValueError("beta_hypergradient needs the previous meta-gradient")
    return dot(meta_grad, prev_meta_grad)


def _descend(theta: ParamVector, rate: float, direction: ParamVector) -> ParamVector:
    return axpy(-rate, direction, theta).detach()


def _guard_rate(value: float, name: str, cfg: MetaConfig, it: int) -> float:
    if cfg.lr_floor is not None and (math.isnan(value) or value < cfg.lr_floor):
        return float(cfg.lr_floor)
    _finite(value, name, it)
    if value < 0:
        raise DivergenceError(f"{name} became negative at iteration {it}: {value}")
    return value


def _train_loss(per_task) -> float:
    return float(np.mean([t.train_loss for t in per_task]))


def maml_step(learner: Learner, state: MetaState, batch: list[Episode], cfg: MetaConfig):
    """One MAML iteration: theta <- theta - beta * meta_grad; rates fixed."""
    mg, ml, per_task = meta_gradient(learner, state.theta, batch, state.alpha,
                                     cfg.first_order, cfg.n_inner_steps)
    if not mg.all_finite():
        raise DivergenceError(f"meta-gradient is not finite at iteration {state.iter}")
    theta = _descend(state.theta, state.beta, mg)
    new = MetaState(theta, state.alpha, state.beta, mg, state.iter + 1)
    report = StepReport(_train_loss(per_task), ml, state.alpha, state.beta, n_tasks=len(batch))
    return new, report


def alpha_maml_step(learner: Learner, state: MetaState, batch: list[Episode], cfg: MetaConfig):
    """One Alpha MAML iteration.

    Order: adapt each task with the current alpha; update alpha from the
    hypergradient; update beta from the previous meta-gradient (skipped on
    the first iteration); descend theta with the new beta.
    """
    it = state.iter
    mg, ml, per_task = meta_gradient(learner, state.theta, batch, state.alpha,
                                     cfg.first_order, cfg.n_inner_steps)
    if not mg.all_finite():
        raise DivergenceError(f"meta-gradient is not finite at iteration {it}")

    h_alpha = _finite(alpha_hypergradient(per_task), "alpha hypergradient", it)
    prev_h_alpha = None
    if cfg.alpha_update_source == "current":
        alpha = state.alpha + cfg.alpha_hyperlr * h_alpha
    else:
        prev_h_alpha = h_alpha
        alpha = state.alpha
        if state.prev_alpha_hypergrad is not None:
            alpha = state.alpha + cfg.alpha_hyperlr * state.prev_alpha_hypergrad
    alpha = _guard_rate(alpha, "alpha", cfg, it)

    h_beta, beta = 0.0, state.beta
    if state.prev_meta_grad is not None:
        h_beta = _finite(beta_hypergradient(mg, state.prev_meta_grad), "beta hypergradient", it)
        beta = _guard_rate(state.beta + cfg.beta_hyperlr * h_beta, "beta", cfg, it)

    theta = _descend(state.theta, beta, mg)
    new = MetaState(theta, alpha, beta, mg, it + 1, prev_h_alpha)
    report = StepReport(_train_loss(per_task), ml, alpha, beta, h_alpha, h_beta,
                        n_tasks=len(batch), beta_updated=state.prev_meta_grad is not None)
    return new, report


def step(algorithm: str, learner: Learner, state: MetaState, batch, cfg: MetaConfig):
    if algorithm == "maml":
        return maml_step(learner, state, batch, cfg)
    if algorithm in ("alpha_maml", "alpha-maml"):
        return alpha_maml_step(learner, state, batch, cfg)
    raise ValueError(f"unknown algorithm {algorithm!r}")


# ---------------------------------------------------------------- evaluation

def _score(learner: Learner, params: ParamVector, inputs, targets) -> float:
    out = learner.forward(params, inputs)
    if learner.loss_kind == "cross_entropy":
        return float(np.mean(np.argmax(out.data, axis=1) == np.asarray(targets)))
    return float(np.mean((out.data - np.asarray(targets).reshape(out.shape)) ** 2))


def adapt_and_score(learner: Learner, theta: ParamVector, episode: Episode, alpha: float,
                    n_steps: int) -> float:
    """Accuracy (classification) or MSE (regression) on the query set after adaptation."""
    params = theta.detach()
    if n_steps > 0:
        graph = Graph()
        th_p, _, _ = inner_adapt(learner, params.on(graph), episode.train_inputs,
                                 episode.train_targets, alpha, n_steps, track_higher_order=False)
        params = th_p.detach()
    return _score(learner, params, episode.test_inputs, episode.test_targets)


def evaluate(learner: Learner, theta: ParamVector, dist: TaskDistribution, alpha: float,
             n_episodes: int, n_steps: int, rng: np.random.Generator | None = None):
    """Mean query metric over fresh episodes with a 95% normal-approximation interval."""
    if n_episodes < 1:
        raise ValueError("need >= 1 episode")
    rng = dist.rng() if rng is None else rng
    scores = np.array([adapt_and_score(learner, theta, ep, alpha, n_steps)
                       for ep in make_batch(dist, n_episodes, rng)])
    half = 1.96 * scores.std(ddof=1) / math.sqrt(n_episodes) if n_episodes > 1 else float("inf")
    m = float(scores.mean())
    return m, (m - half, m + half)


def query_loss(learner: Learner, theta: ParamVector, episodes: list[Episode], alpha: float,
               n_steps: int = 1) -> float:
    """Mean post-adaptation query loss over ``episodes`` (first-order adaptation)."""
    total = 0.0
    for ep in episodes:
        graph = Graph()
        th_p, _, _ = inner_adapt(learner, theta.on(graph), ep.train_inputs, ep.train_targets,
                                 alpha, max(n_steps, 1), track_higher_order=False)
        with graph.no_record():
            total += learner.loss(th_p, ep.test_inputs, ep.test_targets).item()
    return total / len(episodes)


# ---------------------------------------------------------------- checkpoints

CKPT_MAGIC = b"AMML1"
CKPT_VERSION = 1


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def _pack_segments(pv: ParamVector) -> bytes:
    parts = [struct.pack("<I", len(pv))]
    for s in pv.segments:
        parts.append(struct.pack("<B", s.ndim) + struct.pack(f"<{s.ndim}Q", *s.shape))
        parts.append(np.ascontiguousarray(s.data, dtype="<f8").tobytes())
    return b"".join(parts)


def _unpack_segments(buf: bytes, off: int):
    (n,) = struct.unpack_from("<I", buf, off)
    off += 4
    arrays = []
    for _ in range(n):
        (nd,) = struct.unpack_from("<B", buf, off)
        off += 1
        shape = struct.unpack_from(f"<{nd}Q", buf, off)
        off += 8 * nd
        count = int(np.prod(shape)) if nd else 1
        arr = np.frombuffer(buf, dtype="<f8", count=count, offset=off).reshape(shape).astype(np.float64)
        off += 8 * count
        arrays.append(arr)
    return ParamVector.from_arrays(arrays), off


def checkpoint_bytes(state: MetaState, config: dict) -> bytes:
    parts = [CKPT_MAGIC, struct.pack("<Hddq", CKPT_VERSION, state.alpha, state.beta, state.iter),
             _pack_segments(state.theta)]
    if state.prev_meta_grad is None:
        parts.append(b"\x00")
    else:
        parts.append(b"\x01" + _pack_segments(state.prev_meta_grad))
    if state.prev_alpha_hypergrad is None:
        parts.append(b"\x00")
    else:
        parts.append(b"\x01" + struct.pack("<d", state.prev_alpha_hypergrad))
    text = canonical_json(config).encode("utf-8")
    parts.append(struct.pack("<I", len(text)) + text)
    return b"".join(parts)


def save_checkpoint(path, state: MetaState, config: dict) -> None:
    Path(path).write_bytes(checkpoint_bytes(state, config))


def load_checkpoint(path):
    """Return ``(MetaState, config dict)``."""
    buf = Path(path).read_bytes()
    if buf[:5] != CKPT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint (bad magic)")
    version, alpha, beta, it = struct.unpack_from("<Hddq", buf, 5)
    if version != CKPT_VERSION:
        raise ValueError(f"{path}: checkpoint version {version} unsupported (expected {CKPT_VERSION})")
    off = 5 + struct.calcsize("<Hddq")
    theta, off = _unpack_segments(buf, off)
    prev = None
    if buf[off]:
        prev, off = _unpack_segments(buf, off + 1)
    else:
        off += 1
    prev_h = None
    if buf[off]:
        (prev_h,) = struct.unpack_from("<d", buf, off + 1)
        off += 9
    else:
        off += 1
    (ln,) = struct.unpack_from("<I", buf, off)
    config = json.loads(buf[off + 4: off + 4 + ln].decode("utf-8"))
    return MetaState(theta, alpha, beta, prev, it, prev_h), config


def config_dict(cfg: MetaConfig) -> dict:
    return asdict(cfg)
