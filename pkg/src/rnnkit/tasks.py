"""Synthetic long-memory benchmarks: the adding problem and copy-memory.

Generators are pure functions of (shape parameters, rng): each batch draws
one 64-bit value from the caller's deterministic rng and expands it through
a PCG64 stream, so batches are reproducible per seed at array speed, and
train/val streams seeded differently never share a sequence.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError
from .rng import Rng

COPY_ALPHABET = 8   # content symbols 0..7
COPY_BLANK = 8
COPY_GO = 9
COPY_CLASSES = 10


def _bulk(rng: Rng) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(rng.next_u64()))


def gen_adding(T: int, B: int, rng: Rng) -> tuple[np.ndarray, np.ndarray]:
    """Adding problem: channel 0 is noise in [0, 1); channel 1 marks one
    position in each half of the sequence; the target is the sum of the two
    marked channel-0 values.

    Returns (inputs (T, B, 2), targets (B, 1)).
    """
    if T < 2:
        raise ContractError(f"adding needs T >= 2, got {T}")
    gen = _bulk(rng)
    values = gen.random((T, B))
    half = T // 2
    first = gen.integers(0, half, size=B)
    second = gen.integers(half, T, size=B)
    cols = np.arange(B)
    inputs = np.zeros((T, B, 2), dtype=np.float64)
    inputs[:, :, 0] = values
    inputs[first, cols, 1] = 1.0
    inputs[second, cols, 1] = 1.0
    targets = (values[first, cols] + values[second, cols]).reshape(B, 1)
    return inputs, targets


def gen_copy(T_blank: int, K: int, B: int,
             rng: Rng) -> tuple[np.ndarray, np.ndarray]:
    """Copy-memory: K random symbols, T_blank blanks, a go marker, then K
    blanks; the model must emit blanks everywhere except the last K
    positions, which reproduce the prefix.

    Returns (inputs (T, B, 10) one-hot, targets (T, B) class indices),
    with T = K + T_blank + 1 + K.
    """
    if T_blank < 1 or K < 1:
        raise ContractError(f"copy needs T_blank >= 1 and K >= 1, got {T_blank}, {K}")
    gen = _bulk(rng)
    t_total = K + T_blank + 1 + K
    symbols = gen.integers(0, COPY_ALPHABET, size=(K, B))
    classes = np.full((t_total, B), COPY_BLANK, dtype=np.int64)
    classes[:K] = symbols
    classes[K + T_blank] = COPY_GO
    inputs = np.zeros((t_total, B, COPY_CLASSES), dtype=np.float64)
    inputs[np.arange(t_total)[:, None], np.arange(B)[None, :], classes] = 1.0
    targets = np.full((t_total, B), COPY_BLANK, dtype=np.int64)
    targets[-K:] = symbols
    return inputs, targets


def adding_metric(predictions: np.ndarray, targets: np.ndarray) -> float:
    """Mean squared error."""
    return float(np.mean((predictions - targets) ** 2))


def copy_metric(logits: np.ndarray, targets: np.ndarray, k: int) -> float:
    """Accuracy over the final k positions only."""
    pred = logits[-k:].argmax(axis=-1)
    return float(np.mean(pred == targets[-k:]))


def task_metric(kind: str, predictions: np.ndarray, targets: np.ndarray,
                k: int | None = None) -> float:
    if kind == "adding":
        return adding_metric(predictions, targets)
    if kind == "copy":
        if k is None:
            raise ContractError("copy metric needs the suffix length k")
        return copy_metric(predictions, targets, k)
    raise ContractError(f"unknown task kind {kind!r}")


@dataclass(frozen=True)
class TaskSpec:
    """A benchmark task: what to generate and how to score it."""

    kind: str
    T: int = 100       # adding: sequence length
    T_blank: int = 50  # copy: delay length
    K: int = 10        # copy: prefix length

    def __post_init__(self):
        if self.kind not in ("adding", "copy"):
            raise ContractError(f"unknown task kind {self.kind!r}")
        if self.kind == "adding" and self.T < 2:
            raise ContractError(f"adding needs T >= 2, got {self.T}")
        if self.kind == "copy" and (self.T_blank < 1 or self.K < 1):
            raise ContractError(
                f"copy needs T_blank >= 1 and K >= 1, got {self.T_blank}, {self.K}")

    @property
    def input_size(self) -> int:
        return 2 if self.kind == "adding" else COPY_CLASSES

    @property
    def output_size(self) -> int:
        return 1 if self.kind == "adding" else COPY_CLASSES

    @property
    def loss_kind(self) -> str:
        return "mse" if self.kind == "adding" else "cross_entropy"

    @property
    def seq_len(self) -> int:
        return self.T if self.kind == "adding" else self.K + self.T_blank + 1 + self.K

    @property
    def metric_mode(self) -> str:
        """Whether a smaller or larger task metric is better."""
        return "min" if self.kind == "adding" else "max"

    def better(self, a: float, b: float) -> bool:
        return a < b if self.metric_mode == "min" else a > b

    def gen_batch(self, batch: int, rng: Rng) -> tuple[np.ndarray, np.ndarray]:
        if self.kind == "adding":
            return gen_adding(self.T, batch, rng)
        return gen_copy(self.T_blank, self.K, batch, rng)

    def metric(self, predictions: np.ndarray, targets: np.ndarray) -> float:
        if self.kind == "adding":
            return adding_metric(predictions, targets)
        return copy_metric(predictions, targets, self.K)
