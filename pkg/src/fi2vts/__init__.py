"""Frequency-domain multivariate forecaster on a small numpy autodiff engine."""

from .errors import ConfigError, DataError, ShapeError, UsageError
from .network import RunConfig, init_params, model_forward, predict
from .training import evaluate, train

__version__ = "0.1.0"

__all__ = ["ConfigError", "DataError", "ShapeError", "UsageError", "RunConfig",
           "init_params", "model_forward", "predict", "evaluate", "train"]
