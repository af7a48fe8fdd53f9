"""Cell-level gradient verification through the scan driver.

Each cell is unrolled for a few steps on random bounded inputs, the mean of
all outputs is the scalar target, and the tape gradient for every parameter
is compared against central finite differences. The fixed default seed
keeps relu-family pre-activations clear of the kink, where the comparison
would be meaningless.
"""

from __future__ import annotations

import numpy as np

from .cells import REGISTRY, make_cell
from .errors import ContractError
from .layers import scan
from .rng import Rng
from .tape import grad_check

TOLERANCE = 1e-5
DEFAULT_SEED = 1234


def gradcheck_cell(name: str, size: int = 4, batch: int = 2,
                   time_steps: int = 4, eps: float = 1e-6,
                   seed: int = DEFAULT_SEED) -> float:
    """Max relative error of d mean(scan outputs) / d params for one cell.

    The scan starts from a small random state rather than zeros; a zero
    state leaves multiplicative paths structurally dead at the first step,
    which buries their gradients in finite-difference roundoff.
    """
    from .cells import CellState

    cell = make_cell(name, size, size)
    params = cell.create_params(Rng(seed))
    gen = np.random.Generator(np.random.PCG64(seed))
    data = gen.uniform(-1.0, 1.0, (time_steps, batch, size))
    state0 = {f: gen.uniform(-0.5, 0.5, (batch, size))
              for f in cell.state_fields}

    def build(tape, leaves):
        start = CellState(tuple((f, tape.leaf(state0[f]))
                                for f in cell.state_fields))
        result = scan(cell, tape, leaves, data, state0=start)
        return tape.reduce_mean(result.outputs)

    return grad_check(build, params, eps)


def gradcheck_all(size: int = 4, batch: int = 2, time_steps: int = 4,
                  eps: float = 1e-6,
                  seed: int = DEFAULT_SEED) -> dict[str, float]:
    return {name: gradcheck_cell(name, size, batch, time_steps, eps, seed)
            for name in REGISTRY}


def gradcheck_names(which: str) -> list[str]:
    if which == "all":
        return list(REGISTRY)
    if which not in REGISTRY:
        raise ContractError(
            f"unknown cell {which!r}; available: {', '.join(REGISTRY)} or 'all'")
    return [which]
