"""MAML and Alpha MAML on a small numpy autodiff engine."""
from .meta import (DivergenceError, MetaConfig, MetaState, StepReport, alpha_hypergradient,
                   alpha_maml_step, beta_hypergradient, evaluate, inner_adapt, maml_step,
                   meta_gradient)
from .models import Learner, ModelSpec

__version__ = "0.1.0"

__all__ = [
    "DivergenceError", "MetaConfig", "MetaState", "StepReport", "alpha_hypergradient",
    "alpha_maml_step", "beta_hypergradient", "evaluate", "inner_adapt", "maml_step",
    "meta_gradient", "Learner", "ModelSpec",
]
