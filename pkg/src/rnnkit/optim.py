"""Losses, global-norm gradient clipping, and first-order optimizers.

Optimizers update parameter arrays in place and keep per-parameter slots
whose shapes mirror the parameters exactly; slots and the step counter
round-trip through checkpoints bit-exactly.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import ContractError, DimensionError
from .tape import Node, Tape


def mse_loss(tape: Tape, predictions: Node, targets: np.ndarray) -> Node:
    """mean((p - y)^2) as a scalar node."""
    tgt = tape.leaf(targets)
    if tgt.value.shape != predictions.value.shape:
        raise DimensionError(
            f"mse: predictions {predictions.value.shape} vs targets {tgt.value.shape}")
    return tape.reduce_mean(tape.square(tape.sub(predictions, tgt)))


def cross_entropy_loss(tape: Tape, logits: Node, targets: np.ndarray) -> Node:
    """Mean -log softmax(logits)[target] over positions; raw logits in."""
    return tape.cross_entropy(logits, targets)


def loss(kind: str, tape: Tape, predictions: Node, targets: np.ndarray) -> Node:
    if kind == "mse":
        return mse_loss(tape, predictions, targets)
    if kind == "cross_entropy":
        return cross_entropy_loss(tape, predictions, targets)
    raise ContractError(f"unknown loss kind {kind!r}")


def clip_grad_norm(grads: dict[str, np.ndarray],
                   max_norm: float) -> tuple[dict[str, np.ndarray], float]:
    """Scale all gradients by max_norm/n when the global L2 norm n exceeds
    max_norm; returns (grads, pre-clip norm). Below the bound the gradients
    pass through untouched."""
    if max_norm <= 0:
        raise ContractError(f"max_norm must be > 0, got {max_norm}")
    total = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    if total > max_norm:
        scale = max_norm / total
        grads = {k: g * scale for k, g in grads.items()}
    return grads, total


class Sgd:
    """Momentum SGD: v <- mu*v + g; theta <- theta - lr*v."""

    kind = "sgd"

    def __init__(self, params: dict[str, np.ndarray], lr: float,
                 momentum: float = 0.0):
        self.params = params
        self.lr = lr
        self.momentum = momentum
        self.t = 0
        self.velocity = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        for name, p in self.params.items():
            v = self.velocity[name]
            v *= self.momentum
            v += grads[name]
            p -= self.lr * v

    def slots(self) -> dict[str, np.ndarray]:
        return {f"velocity.{k}": v for k, v in self.velocity.items()}

    def load_slots(self, slots: dict[str, np.ndarray], t: int) -> None:
        self.t = t
        for k in self.velocity:
            self.velocity[k] = slots[f"velocity.{k}"].copy()


class Adam:
    """Bias-corrected Adam with the canonical constants."""

    kind = "adam"

    def __init__(self, params: dict[str, np.ndarray], lr: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, p in self.params.items():
            g = grads[name]
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)

    def slots(self) -> dict[str, np.ndarray]:
        out = {f"m.{k}": v for k, v in self.m.items()}
        out.update({f"v.{k}": v for k, v in self.v.items()})
        return out

    def load_slots(self, slots: dict[str, np.ndarray], t: int) -> None:
        self.t = t
        for k in self.m:
            self.m[k] = slots[f"m.{k}"].copy()
            self.v[k] = slots[f"v.{k}"].copy()


def make_optimizer(kind: str, params: dict[str, np.ndarray], lr: float,
                   momentum: float = 0.0):
    if kind == "sgd":
        return Sgd(params, lr, momentum)
    if kind == "adam":
        return Adam(params, lr)
    raise ContractError(f"unknown optimizer kind {kind!r}")
