"""Full-sequence BPTT training with deterministic metric streams.

A run derives four independent generators from the root seed (parameter
init, training data, validation data, dropout), fixes the validation set up
front, and then iterates epochs of forward / backward / clip / step. The
returned history carries wall time per epoch, but recorded seconds are
zeroed unless the config opts into timing, keeping every written artifact a
pure function of (resolved config, code version).
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from .config import RunConfig
from .errors import NonFiniteError, RnnkitError
from .model import SequenceModel
from .optim import clip_grad_norm, loss as make_loss, make_optimizer
from .rng import Rng
from .tape import Tape
from .tasks import TaskSpec

STREAM_INIT, STREAM_TRAIN, STREAM_VAL, STREAM_DROP = range(4)


class TrainAbort(RnnkitError):
    """Raised when a run hits non-finite numbers; names epoch and batch."""

    def __init__(self, epoch: int, batch: int, reason: str):
        super().__init__(
            f"numeric abort at epoch {epoch}, batch {batch}: {reason}")
        self.epoch = epoch
        self.batch = batch


@dataclass
class MetricRow:
    epoch: int
    split: str
    loss: float
    metric: float
    seconds: float


@dataclass
class TrainResult:
    history: list[MetricRow]
    model: SequenceModel
    optimizer: object
    best_epoch: int
    best_params: dict[str, np.ndarray]
    best_opt_slots: dict[str, np.ndarray]
    best_opt_t: int
    total_seconds: float

    def final_val(self) -> MetricRow:
        return [r for r in self.history if r.split == "val"][-1]


def build_model(cfg: RunConfig, init_rng: Rng) -> tuple[SequenceModel, TaskSpec]:
    task = cfg.task_spec()
    dtype = np.float64 if cfg.precision == "f64" else np.float32
    model = SequenceModel(cfg.layer_spec(), task.output_size, init_rng, dtype)
    return model, task


def _forward(model: SequenceModel, task: TaskSpec, inputs: np.ndarray,
             targets: np.ndarray, train_mode: bool, drop_rng: Rng | None):
    """One forward pass to the loss node; returns (tape, leaves, loss, metric)."""
    tape = Tape(model.dtype)
    leaves = model.leaves(tape)
    result = model.run(tape, leaves, inputs, train_mode=train_mode,
                       drop_rng=drop_rng)
    if task.kind == "adding":
        pred = model.head_last(tape, leaves, result)
        loss_node = make_loss("mse", tape, pred, targets.astype(model.dtype))
        metric = task.metric(pred.value, targets)
    else:
        logits = model.head_all(tape, leaves, result)
        loss_node = make_loss("cross_entropy", tape, logits, targets.reshape(-1))
        t, b = targets.shape
        metric = task.metric(logits.value.reshape(t, b, -1), targets)
    return tape, leaves, loss_node, metric


def evaluate(model: SequenceModel, task: TaskSpec,
             val_set: list[tuple[np.ndarray, np.ndarray]]) -> tuple[float, float]:
    """Mean loss and task metric over a fixed validation set (eval mode)."""
    losses, metrics = [], []
    for inputs, targets in val_set:
        _, _, loss_node, metric = _forward(model, task, inputs, targets,
                                           train_mode=False, drop_rng=None)
        losses.append(float(loss_node.value[0]))
        metrics.append(metric)
    return float(np.mean(losses)), float(np.mean(metrics))


def make_val_set(cfg: RunConfig, task: TaskSpec) -> list[tuple[np.ndarray, np.ndarray]]:
    """The fixed validation stream; identical for training and cmd_eval."""
    val_rng = Rng(cfg.seed).split(STREAM_VAL)
    return [task.gen_batch(cfg.batch_size, val_rng) for _ in range(cfg.val_batches)]


def train_run(cfg: RunConfig, on_epoch=None) -> TrainResult:
    root = Rng(cfg.seed)
    init_rng = root.split(STREAM_INIT)
    train_rng = root.split(STREAM_TRAIN)
    drop_rng = root.split(STREAM_DROP)
    model, task = build_model(cfg, init_rng)
    optimizer = make_optimizer(cfg.optimizer, model.params, cfg.lr, cfg.momentum)
    val_set = make_val_set(cfg, task)

    history: list[MetricRow] = []
    best_epoch = 0
    best_metric = math.nan
    best_params: dict[str, np.ndarray] = {}
    best_slots: dict[str, np.ndarray] = {}
    best_t = 0
    run_start = time.perf_counter()

    for epoch in range(1, cfg.epochs + 1):
        epoch_start = time.perf_counter()
        loss_sum = 0.0
        metric_sum = 0.0
        for batch_idx in range(cfg.batches_per_epoch):
            inputs, targets = task.gen_batch(cfg.batch_size, train_rng)
            try:
                tape, leaves, loss_node, metric = _forward(
                    model, task, inputs, targets, train_mode=True,
                    drop_rng=drop_rng)
            except NonFiniteError as exc:
                raise TrainAbort(epoch, batch_idx, str(exc)) from exc
            loss_val = float(loss_node.value[0])
            if not math.isfinite(loss_val):
                raise TrainAbort(epoch, batch_idx, f"loss is {loss_val}")
            tape.backward(loss_node)
            grads = {name: tape.grad(leaves[name]) for name in model.params}
            grads, _ = clip_grad_norm(grads, cfg.clip_norm)
            optimizer.step(grads)
            loss_sum += loss_val
            metric_sum += metric
        train_seconds = time.perf_counter() - epoch_start

        val_start = time.perf_counter()
        val_loss, val_metric = evaluate(model, task, val_set)
        val_seconds = time.perf_counter() - val_start

        n = cfg.batches_per_epoch
        train_row = MetricRow(epoch, "train", loss_sum / n, metric_sum / n,
                              train_seconds if cfg.timing else 0.0)
        val_row = MetricRow(epoch, "val", val_loss, val_metric,
                            val_seconds if cfg.timing else 0.0)
        history.append(train_row)
        history.append(val_row)
        if on_epoch is not None:
            on_epoch(train_row, val_row)

        # Best by validation task metric; ties keep the earlier epoch.
        if best_epoch == 0 or task.better(val_metric, best_metric):
            best_epoch = epoch
            best_metric = val_metric
            best_params = {k: v.copy() for k, v in model.params.items()}
            best_slots = {k: v.copy() for k, v in optimizer.slots().items()}
            best_t = optimizer.t

    return TrainResult(history, model, optimizer, best_epoch, best_params,
                       best_slots, best_t,
                       time.perf_counter() - run_start)


def optimizer_records(optimizer) -> dict[str, np.ndarray]:
    """Optimizer slots plus the step counter, as checkpoint records."""
    out = dict(optimizer.slots())
    out["t"] = np.array([float(optimizer.t)], dtype=np.float64)
    return out
