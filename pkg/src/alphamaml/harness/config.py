"""Run configuration: one flat record, serialised as canonical JSON."""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from ..meta import MetaConfig, canonical_json
from ..models import Learner, ModelSpec
from ..tasks import TASK_KINDS

ALGORITHMS = ("maml", "alpha-maml")
THRESHOLD_METRICS = ("meta_loss", "train_loss")


@dataclass
class RunConfig:
    algorithm: str = "maml"
    # meta-learning rates and schedule
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
    # task distribution
    task: str = "omniglot"
    n_way: int = 5
    k_shot: int = 1
    q_query: int = 15
    data_root: str | None = None
    cache: str | None = None
    split_seed: int = 0
    n_train: int = 1200  # omniglot characters in the meta-train split
    hidden: tuple = (40, 40)
    # run control
    max_iters: int = 500
    loss_threshold: float = 1.56
    threshold_metric: str = "meta_loss"
    smoothing_window: int = 10
    stop_at_threshold: bool = False
    val_every: int = 10
    n_val_episodes: int = 20
    seed: int = 0
    output_dir: str | None = None

    def __post_init__(self):
        if self.algorithm == "alpha_maml":
            self.algorithm = "alpha-maml"
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"algorithm must be one of {ALGORITHMS}")
        if self.task not in TASK_KINDS:
            raise ValueError(f"task must be one of {TASK_KINDS}")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if not self.loss_threshold > 0:
            raise ValueError("loss_threshold must be positive")
        if self.threshold_metric not in THRESHOLD_METRICS:
            raise ValueError(f"threshold_metric must be one of {THRESHOLD_METRICS}")
        if self.smoothing_window < 1 or self.val_every < 1 or self.n_val_episodes < 1:
            raise ValueError("smoothing_window, val_every and n_val_episodes must be positive")
        self.hidden = tuple(int(h) for h in self.hidden)
        self.meta_config()  # validates the rate fields

    # -------------------------------------------------------------- views

    def meta_config(self) -> MetaConfig:
        return MetaConfig(
            alpha0=self.alpha0, beta0=self.beta0,
            alpha_hyperlr=self.alpha_hyperlr if self.algorithm == "alpha-maml" else 0.0,
            beta_hyperlr=self.beta_hyperlr if self.algorithm == "alpha-maml" else 0.0,
            meta_batch_size=self.meta_batch_size, n_inner_steps=self.n_inner_steps,
            n_inner_steps_eval=self.n_inner_steps_eval, first_order=self.first_order,
            lr_floor=self.lr_floor, alpha_update_source=self.alpha_update_source,
        )

    def model_spec(self) -> ModelSpec:
        if self.task == "omniglot":
            return ModelSpec("convnet4", self.n_way, hidden=(), seed=self.seed)
        if self.task == "sinusoid":
            return ModelSpec("mlp", 1, hidden=self.hidden, seed=self.seed, input_dim=1)
        return ModelSpec("mlp", self.n_way, hidden=self.hidden, seed=self.seed, input_dim=2)

    def learner(self) -> Learner:
        return Learner(self.model_spec(), "mse" if self.task == "sinusoid" else "cross_entropy")

    # -------------------------------------------------------------- serialisation

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json_file(cls, path) -> "RunConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_json(self) -> str:
        return canonical_json(self.to_dict())

    def content_hash(self) -> str:
        """Hash of the settings that determine the trace (output_dir excluded)."""
        d = self.to_dict()
        d.pop("output_dir", None)
        return hashlib.sha256(canonical_json(d).encode("utf-8")).hexdigest()[:16]

    def updated(self, **changes) -> "RunConfig":
        return replace(self, **changes)
