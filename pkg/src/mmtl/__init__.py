"""Desk-scale multimodal multi-task learning stack: a float64 autodiff core,
a dual-path temporal-scan backbone over multi-view image sequences, a 3-d CNN
joints branch, gated multimodal fusion, four classification heads, and the
training/benchmark tooling to exercise all of it on synthetic data.
"""

from .tensor import Tensor, Tape, backward, param
from .errors import (
    ArgumentError,
    ConfigError,
    DimensionError,
    InputError,
    TapeError,
    TrainingDiverged,
)

__all__ = [
    "Tensor",
    "Tape",
    "backward",
    "param",
    "ArgumentError",
    "ConfigError",
    "DimensionError",
    "InputError",
    "TapeError",
    "TrainingDiverged",
]

__version__ = "0.1.0"
