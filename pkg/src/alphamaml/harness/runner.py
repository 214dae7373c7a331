"""Single training runs: per-iteration trace, validation probes, checkpoint."""
from __future__ import annotations

import csv
import io
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import meta
from ..autodiff import BACKEND
from ..tasks import TaskDistribution, ingest_omniglot, make_batch
from .config import RunConfig

log = logging.getLogger(__name__)

TRACE_COLUMNS = ("iter", "alpha", "beta", "train_loss", "meta_loss", "val_loss")
TRACE_VERSION = 1
NOT_CONVERGED = "NOT_CONVERGED"

_STORES: dict = {}


@dataclass
class TraceRow:
    iter: int
    alpha: float
    beta: float
    train_loss: float
    meta_loss: float
    val_loss: float | None = None


@dataclass
class RunTrace:
    rows: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)
    status: str = "completed"
    state: meta.MetaState | None = field(default=None, repr=False)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.rows], dtype=float)

    def csv_text(self) -> str:
        return trace_csv(self.rows)

    @property
    def iters_to_threshold(self):
        return self.metadata.get("iters_to_threshold")


def _fmt(x) -> str:
    return "" if x is None else repr(float(x))


def trace_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRACE_COLUMNS)
    for r in rows:
        w.writerow([r.iter, _fmt(r.alpha), _fmt(r.beta), _fmt(r.train_loss), _fmt(r.meta_loss),
                    _fmt(r.val_loss)])
    return buf.getvalue()


def read_trace(path) -> list[TraceRow]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != TRACE_COLUMNS:
            raise ValueError(f"{path}: trace CSV must have columns {','.join(TRACE_COLUMNS)}; got {header}")
        rows = []
        for rec in reader:
            it, a, b, tl, ml, vl = rec
            rows.append(TraceRow(int(it), float(a), float(b), float(tl), float(ml),
                                 float(vl) if vl else None))
    return rows


def smoothed(values, window: int) -> np.ndarray:
    """Trailing moving average; NaN until a full window is available."""
    v = np.asarray(values, dtype=float)
    out = np.full(v.shape, np.nan)
    if v.size >= window:
        c = np.cumsum(np.insert(v, 0, 0.0))
        out[window - 1:] = (c[window:] - c[:-window]) / window
    return out


def iters_to_threshold(values, threshold: float, window: int = 10, iters=None):
    """First iteration whose trailing ``window``-average is at or below ``threshold``."""
    s = smoothed(values, window)
    hit = np.flatnonzero(s <= threshold)
    if hit.size == 0:
        return None
    k = int(hit[0])
    return int(iters[k]) if iters is not None else k + 1


def load_store(cfg: RunConfig):
    key = (cfg.cache, cfg.data_root, cfg.split_seed, cfg.n_train)
    if key not in _STORES:
        if cfg.cache is None and cfg.data_root is None:
            raise FileNotFoundError(
                "omniglot task needs a dataset: pass --data-root <omniglot images> and/or "
                "--cache <file> (build one with `alphamaml ingest`)"
            )
        if cfg.cache is not None and not Path(cfg.cache).exists() and cfg.data_root is None:
            raise FileNotFoundError(
                f"Omniglot cache {cfg.cache} not found; run `alphamaml ingest --data-root <dir> "
                f"--cache {cfg.cache}` first"
            )
        _STORES[key] = ingest_omniglot(cfg.data_root, cfg.cache, n_train=cfg.n_train,
                                       split_seed=cfg.split_seed)
    return _STORES[key]


def distributions(cfg: RunConfig):
    """Meta-train and meta-test task distributions for ``cfg``."""
    store = load_store(cfg) if cfg.task == "omniglot" else None
    q = cfg.q_query
    train = TaskDistribution(cfg.task, cfg.n_way, cfg.k_shot, q, "meta_train", cfg.seed, store)
    test = TaskDistribution(cfg.task, cfg.n_way, cfg.k_shot, q, "meta_test", cfg.seed, store)
    return train, test


def _rngs(seed: int):
    task_ss, val_ss = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(task_ss), np.random.default_rng(val_ss)


def run(cfg: RunConfig, write: bool = True) -> RunTrace:
    """Train for ``cfg.max_iters`` iterations (or until divergence).

    Each row records the task learning rate used for that iteration's inner
    step and the meta learning rate used for its outer step.
    """
    t0 = time.perf_counter()
    learner = cfg.learner()
    mcfg = cfg.meta_config()
    train_dist, test_dist = distributions(cfg)
    task_rng, val_rng = _rngs(cfg.seed)
    val_eps = make_batch(test_dist, cfg.n_val_episodes, val_rng)
    state = meta.MetaState.initial(learner.init(), mcfg)
    algorithm = "maml" if cfg.algorithm == "maml" else "alpha_maml"

    trace = RunTrace()
    error = None
    hit = None
    metric_hist = []
    for i in range(1, cfg.max_iters + 1):
        batch = make_batch(train_dist, cfg.meta_batch_size, task_rng)
        alpha_used = state.alpha
        try:
            # overflow on the way to divergence is reported via DivergenceError
            with np.errstate(over="ignore", invalid="ignore"):
                state, rep = meta.step(algorithm, learner, state, batch, mcfg)
        except meta.DivergenceError as exc:
            trace.status, error = "diverged", str(exc)
            log.warning("run diverged: %s", exc)
            break
        val = None
        if i == 1 or i % cfg.val_every == 0:
            val = meta.query_loss(learner, state.theta, val_eps, state.alpha,
                                  max(cfg.n_inner_steps_eval, 1))
        row = TraceRow(i, alpha_used, rep.beta_after, rep.train_loss, rep.mean_meta_loss, val)
        trace.rows.append(row)
        metric_hist.append(getattr(row, cfg.threshold_metric))
        if hit is None:
            hit = iters_to_threshold(metric_hist, cfg.loss_threshold, cfg.smoothing_window)
            if hit is not None and cfg.stop_at_threshold:
                break

    final = getattr(trace.rows[-1], cfg.threshold_metric) if trace.rows else float("nan")
    trace.state = state
    trace.metadata = {
        "trace_version": TRACE_VERSION,
        "config": cfg.to_dict(),
        "config_hash": cfg.content_hash(),
        "status": trace.status,
        "error": error,
        "iters_run": len(trace.rows),
        "iters_to_threshold": hit,
        "final_loss": final if math.isfinite(final) else None,
        "final_alpha": state.alpha,
        "final_beta": state.beta,
        "kernel_backend": BACKEND,
        "wall_time_s": round(time.perf_counter() - t0, 3),
    }
    if write and cfg.output_dir:
        write_run(trace, cfg)
    return trace


def write_run(trace: RunTrace, cfg: RunConfig) -> Path:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "trace.csv").write_text(trace.csv_text())
    (out / "run.json").write_text(json.dumps(trace.metadata, indent=2, sort_keys=True) + "\n")
    if trace.state is not None:
        meta.save_checkpoint(out / "checkpoint.bin", trace.state, cfg.to_dict())
    return out
