"""SGD with momentum and coupled weight decay, plus the step-down learning
rate schedule and patience-based early stopping.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np

from .errors import ArgumentError, TrainingDiverged
from .tensor import Tensor


def lr_for_epoch(epoch: int, base_lr: float) -> float:
    """Base rate through epoch 24, halved through epoch 50, then base/20."""
    if epoch < 25:
        return base_lr
    if epoch <= 50:
        return base_lr * 0.5
    return base_lr * 0.05


@dataclass
class OptimizerState:
    base_lr: float = 1e-3
    momentum: float = 0.9
    weight_decay: float = 1e-4
    epoch: int = 0
    velocity: Dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def lr(self) -> float:
        return lr_for_epoch(self.epoch, self.base_lr)


def sgd_step(state: OptimizerState, params: Dict[str, Tensor],
             grads: Optional[Dict[str, np.ndarray]] = None) -> None:
    """v <- momentum*v + g + wd*w;  w <- w - lr*v. Parameters without a
    gradient this step are skipped."""
    lr = state.lr
    for name, p in params.items():
        g = grads.get(name) if grads is not None else p.grad
        if g is None:
            continue
        if not np.all(np.isfinite(g)):
            raise TrainingDiverged(f"non-finite gradient in parameter '{name}'")
        v = state.velocity.get(name)
        if v is None:
            v = np.zeros_like(p.data)
        v = state.momentum * v + g + state.weight_decay * p.data
        state.velocity[name] = v
        p.data = p.data - lr * v


class EarlyStopper:
    """Stop when validation mean accuracy fails to improve by at least
    ``min_delta`` (percentage points) for ``patience`` consecutive epochs."""

    def __init__(self, min_delta_pp: float = 0.1, patience: int = 15):
        if patience <= 0:
            raise ArgumentError("patience must be positive")
        self.min_delta = min_delta_pp / 100.0
        self.patience = patience
        self.best = -np.inf
        self.stale = 0

    def update(self, macc: float) -> bool:
        """Record one epoch's validation mean accuracy; True means stop."""
        if macc >= self.best + self.min_delta:
            self.best = macc
            self.stale = 0
        else:
            self.stale += 1
        return self.stale >= self.patience
