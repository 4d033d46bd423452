"""mvx: multi-view autoencoder toolkit on a self-contained autodiff core."""

from . import (
    config,
    data,
    distributions,
    evaluation,
    networks,
    numcore,
    objectives,
    pooling,
    training,
)
from .errors import MvxError

__all__ = [
    "config",
    "data",
    "distributions",
    "evaluation",
    "networks",
    "numcore",
    "objectives",
    "pooling",
    "training",
    "MvxError",
]

__version__ = "0.1.0"
