"""rnnkit: recurrent cells, layers, and wrappers over a minimal
reverse-mode tape, with deterministic training harnesses for synthetic
long-memory benchmarks."""

from .cells import (CellState, REGISTRY, cell_forward, create_cell,
                    make_cell, parameter_manifest, zero_state)
from .errors import (CheckpointError, ConfigError, ContractError,
                     DimensionError, DomainError, ManifestError,
                     NonFiniteError, RnnkitError)
from .init import Init, initialize
from .layers import (LayerSpec, ScanResult, SequenceBatch,
                     bidirectional_scan, scan, stacked_forward, wrap)
from .model import SequenceModel
from .optim import Adam, Sgd, clip_grad_norm, loss, make_optimizer
from .rng import Rng
from .tape import Node, Tape, grad_check
from .tasks import TaskSpec, gen_adding, gen_copy, task_metric
from .train import TrainAbort, train_run

__version__ = "0.1.0"

__all__ = [
    "Adam", "CellState", "CheckpointError", "ConfigError", "ContractError",
    "DimensionError", "DomainError", "Init", "LayerSpec", "ManifestError",
    "Node", "NonFiniteError", "REGISTRY", "Rng", "RnnkitError", "ScanResult",
    "SequenceBatch", "SequenceModel", "Sgd", "Tape", "TaskSpec", "TrainAbort",
    "bidirectional_scan", "cell_forward", "clip_grad_norm", "create_cell",
    "gen_adding", "gen_copy", "grad_check", "initialize", "loss", "make_cell",
    "make_optimizer", "parameter_manifest", "scan", "stacked_forward",
    "task_metric", "train_run", "zero_state",
]
