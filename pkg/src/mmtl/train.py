"""Toy training loop on synthetic data: full pipeline forward, summed
cross-entropy loss, SGD steps, and periodic evaluation with metrics records.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from .config import TASKS, ModelConfig
from .data import SampleBundle, SyntheticRecipe, augment, generate_synthetic
from .errors import TrainingDiverged
from .heads import TaskMetrics, compute_metrics, format_metrics_record, total_loss
from .model import Model
from .optim import EarlyStopper, OptimizerState, sgd_step
from .tensor import Tape, add, backward, scale


@dataclass
class TrainResult:
    model: Model
    records: List[TaskMetrics] = field(default_factory=list)
    initial_loss: float = float("nan")
    final_loss: float = float("nan")

    @property
    def final_metrics(self) -> TaskMetrics:
        return self.records[-1]


def batch_loss(model: Model, batch: List[SampleBundle], train: bool = True):
    """Mean summed-cross-entropy loss over a batch; returns (loss, telemetry)."""
    losses = []
    tele = []
    specs = model.task_specs
    for bundle in batch:
        result = model.forward_sample(bundle, train=train)
        logits = [result.logits[s.task_id] for s in specs]
        labels = [bundle.labels[s.task_id] for s in specs]
        losses.append(total_loss(logits, labels, specs))
        if result.telemetry is not None:
            tele.append(result.telemetry)
    loss = losses[0]
    for term in losses[1:]:
        loss = add(loss, term)
    loss = scale(loss, 1.0 / len(losses))
    telemetry = np.mean(tele, axis=0) if tele else None
    return loss, telemetry


def evaluate(model: Model, samples: List[SampleBundle]) -> TaskMetrics:
    """Accuracy, per-task mean loss, and mean gate telemetry over a sample set."""
    specs = model.task_specs
    preds: Dict[str, List[int]] = {s.task_id: [] for s in specs}
    labels: Dict[str, List[int]] = {s.task_id: [] for s in specs}
    task_losses = {s.task_id: 0.0 for s in specs}
    tele = []
    started = time.perf_counter()
    for bundle in samples:
        result = model.forward_sample(bundle, train=False)
        for s in specs:
            lg = result.logits[s.task_id].data
            y = bundle.labels[s.task_id]
            preds[s.task_id].append(int(np.argmax(lg)))
            labels[s.task_id].append(int(y))
            z = lg - lg.max()
            task_losses[s.task_id] += float(math.log(np.exp(z).sum()) - z[int(y)])
        if result.telemetry is not None:
            tele.append(result.telemetry)
    elapsed = time.perf_counter() - started
    metrics = compute_metrics(preds, labels)
    n = len(samples)
    metrics.fps = n / elapsed if elapsed > 0 else float("nan")
    metrics.loss = {t: v / n for t, v in task_losses.items()}
    metrics.loss_total = sum(metrics.loss.values())
    if tele:
        # always a 4x3 matrix in task order; dropped tasks stay nan
        full = np.full((len(TASKS), 3), float("nan"))
        mean_tele = np.mean(tele, axis=0)
        for i, s in enumerate(specs):
            full[TASKS.index(s.task_id)] = mean_tele[i]
        metrics.gate_telemetry = full
    else:
        metrics.gate_telemetry = None
    metrics.param_count = model.param_count()
    return metrics


def run_toy_training(config: ModelConfig, recipe: SyntheticRecipe, steps: int,
                     batch_size: int = 8, train_count: int = 256,
                     val_count: int = 256, eval_every: Optional[int] = None,
                     use_augment: bool = False,
                     log_path: Optional[str] = None,
                     stopper: Optional[EarlyStopper] = None) -> TrainResult:
    """Train on a fresh synthetic set; deterministic for a fixed config seed.

    With a ``stopper``, training halts once validation mean accuracy stalls
    for the stopper's patience (checked at each evaluation).
    """
    model = Model(config)
    train_set = list(generate_synthetic(recipe, train_count, config.seed, config))
    val_set = list(generate_synthetic(recipe, val_count, config.seed + 1, config))
    opt = OptimizerState(base_lr=config.base_lr, momentum=config.momentum,
                         weight_decay=config.weight_decay)
    rng = np.random.default_rng([config.seed, 0xBA7C4])
    eval_every = eval_every or max(1, steps // 4)
    result = TrainResult(model=model)
    log_fh = open(log_path, "w") if log_path else None

    try:
        for step in range(steps):
            idx = rng.choice(len(train_set), size=batch_size, replace=False)
            batch = [train_set[i] for i in idx]
            if use_augment:
                batch = [augment(b, int(rng.integers(1 << 31))) for b in batch]
            model.zero_grad()
            with Tape() as tape:
                loss, _ = batch_loss(model, batch, train=True)
            loss_val = loss.item()
            if not math.isfinite(loss_val):
                raise TrainingDiverged(f"non-finite loss at step {step}")
            if step == 0:
                result.initial_loss = loss_val
            backward(tape, loss)
            opt.epoch = (step * batch_size) // max(train_count, 1)
            sgd_step(opt, model.parameters())
            result.final_loss = loss_val

            if (step + 1) % eval_every == 0 or step == steps - 1:
                metrics = evaluate(model, val_set)
                metrics.epoch = opt.epoch
                result.records.append(metrics)
                if log_fh:
                    log_fh.write(format_metrics_record(metrics) + "\n")
                    log_fh.flush()
                if stopper is not None and stopper.update(metrics.macc):
                    break
    finally:
        if log_fh:
            log_fh.close()
    return result
