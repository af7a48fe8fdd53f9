"""Run configuration: a flat, fully-validated JSON key set.

Unknown keys are a hard error (no silent typo acceptance), every field is
checked before any work starts, and resolution is idempotent: resolving an
already-resolved config returns the same values, so a run can always be
reproduced from its own resolved-config.json.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any

from .cells import REGISTRY
from .errors import ConfigError
from .layers import LayerSpec
from .tasks import TaskSpec

# key -> (default, type). Keys with default REQUIRED must be provided.
REQUIRED = object()

SCHEMA: dict[str, tuple[Any, type]] = {
    "cell": (REQUIRED, str),
    "cell_args": ({}, dict),
    "hidden_size": (64, int),
    "direction": ("forward", str),
    "layers": (1, int),
    "dropout": (0.0, float),
    "residual": (False, bool),
    "task": (REQUIRED, str),
    "T": (100, int),
    "T_blank": (50, int),
    "K": (10, int),
    "optimizer": ("adam", str),
    "lr": (1e-3, float),
    "momentum": (0.0, float),
    "epochs": (10, int),
    "batches_per_epoch": (100, int),
    "batch_size": (32, int),
    "val_batches": (10, int),
    "seed": (0, int),
    "clip_norm": (1.0, float),
    "precision": ("f64", str),
    "out_dir": ("run", str),
    "timing": (False, bool),
}


@dataclass
class RunConfig:
    """A validated training-run description."""

    cell: str
    task: str
    cell_args: dict = field(default_factory=dict)
    hidden_size: int = 64
    direction: str = "forward"
    layers: int = 1
    dropout: float = 0.0
    residual: bool = False
    T: int = 100
    T_blank: int = 50
    K: int = 10
    optimizer: str = "adam"
    lr: float = 1e-3
    momentum: float = 0.0
    epochs: int = 10
    batches_per_epoch: int = 100
    batch_size: int = 32
    val_batches: int = 10
    seed: int = 0
    clip_norm: float = 1.0
    precision: str = "f64"
    out_dir: str = "run"
    timing: bool = False

    def task_spec(self) -> TaskSpec:
        return TaskSpec(self.task, T=self.T, T_blank=self.T_blank, K=self.K)

    def layer_spec(self) -> LayerSpec:
        return LayerSpec(self.cell, self.task_spec().input_size,
                         self.hidden_size, hyper=dict(self.cell_args),
                         direction=self.direction, layers=self.layers,
                         dropout=self.dropout, residual=self.residual)

    def resolved(self) -> dict:
        """Every effective value, defaults included: the reproducibility record."""
        return {key: getattr(self, key) for key in SCHEMA}


def _coerce(key: str, value, want: type):
    if want is float and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    if want is int and isinstance(value, bool):
        raise ConfigError(f"key {key!r}: expected int, got bool")
    if not isinstance(value, want):
        raise ConfigError(
            f"key {key!r}: expected {want.__name__}, got {type(value).__name__} "
            f"({value!r})")
    return value


def resolve(raw: dict) -> RunConfig:
    """Validate a raw key/value mapping into a RunConfig."""
    if not isinstance(raw, dict):
        raise ConfigError(f"config must be a JSON object, got {type(raw).__name__}")
    unknown = set(raw) - set(SCHEMA)
    if unknown:
        raise ConfigError(f"unknown config key {sorted(unknown)[0]!r}")
    values = {}
    for key, (default, want) in SCHEMA.items():
        if key in raw:
            values[key] = _coerce(key, raw[key], want)
        elif default is REQUIRED:
            raise ConfigError(f"missing required config key {key!r}")
        else:
            values[key] = default
    cfg = RunConfig(**values)
    _validate(cfg)
    return cfg


def _validate(cfg: RunConfig) -> None:
    if cfg.cell not in REGISTRY:
        raise ConfigError(
            f"key 'cell': unknown cell {cfg.cell!r}; available: {', '.join(REGISTRY)}")
    if cfg.task not in ("adding", "copy"):
        raise ConfigError(f"key 'task': must be 'adding' or 'copy', got {cfg.task!r}")
    if cfg.precision not in ("f64", "f32"):
        raise ConfigError(f"key 'precision': must be 'f64' or 'f32', got {cfg.precision!r}")
    if cfg.optimizer not in ("adam", "sgd"):
        raise ConfigError(f"key 'optimizer': must be 'adam' or 'sgd', got {cfg.optimizer!r}")
    for key, minimum in (("hidden_size", 1), ("layers", 1), ("epochs", 1),
                         ("batches_per_epoch", 1), ("batch_size", 1),
                         ("val_batches", 1), ("T", 2), ("T_blank", 1), ("K", 1)):
        if getattr(cfg, key) < minimum:
            raise ConfigError(f"key {key!r}: must be >= {minimum}, got {getattr(cfg, key)}")
    if cfg.lr < 0:
        raise ConfigError(f"key 'lr': must be >= 0, got {cfg.lr}")
    if not 0.0 <= cfg.momentum < 1.0:
        raise ConfigError(f"key 'momentum': must be in [0, 1), got {cfg.momentum}")
    if not 0.0 <= cfg.dropout < 1.0:
        raise ConfigError(f"key 'dropout': must be in [0, 1), got {cfg.dropout}")
    if cfg.clip_norm <= 0:
        raise ConfigError(f"key 'clip_norm': must be > 0, got {cfg.clip_norm}")
    if cfg.seed < 0:
        raise ConfigError(f"key 'seed': must be >= 0, got {cfg.seed}")
    if cfg.direction not in ("forward", "bidirectional"):
        raise ConfigError(
            f"key 'direction': must be 'forward' or 'bidirectional', got {cfg.direction!r}")
    try:
        cfg.layer_spec().build_cells()  # exercises hyperparams and residual sizing
    except Exception as exc:
        raise ConfigError(str(exc)) from exc


def load_file(path) -> dict:
    """Parse a JSON config file, reporting the line on syntax errors."""
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config parse error at {path}:{exc.lineno}: {exc.msg}")


def parse_override(text: str) -> tuple[str, Any]:
    """Parse a --set KEY=VALUE override; VALUE is JSON when it parses."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not KEY=VALUE")
    key, _, value = text.partition("=")
    key = key.strip()
    if key not in SCHEMA:
        raise ConfigError(f"unknown config key {key!r} in override")
    try:
        parsed = json.loads(value)
    except json.JSONDecodeError:
        parsed = value
    return key, parsed


def apply_overrides(raw: dict, overrides: list[str]) -> dict:
    out = dict(raw)
    for text in overrides:
        key, value = parse_override(text)
        out[key] = value
    return out
