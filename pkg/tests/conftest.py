import os

# Pin BLAS to one thread before numpy loads: at the small matrix sizes used
# throughout, OpenBLAS thread synchronization costs more than it buys
# (measured ~1.4x slower with 2 threads on the desk-scale benchmarks).
os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
os.environ.setdefault("OMP_NUM_THREADS", "1")

import numpy as np
import pytest

from rnnkit.cells import REGISTRY, CellState, make_cell
from rnnkit.layers import wrap
from rnnkit.rng import Rng
from rnnkit.tape import Tape

ALL_CELLS = list(REGISTRY)


def make_state(tape, cell, arrays):
    """CellState from a {field: array} mapping, in the cell's field order."""
    return CellState(tuple((f, tape.leaf(arrays[f])) for f in cell.state_fields))


def random_state_arrays(cell, batch, gen, scale=0.5):
    return {f: gen.uniform(-scale, scale, (batch, cell.hidden_size))
            for f in cell.state_fields}


def step_once(cell, params, x_np, state_arrays):
    """One cell_forward on a fresh tape; returns (out, {field: array})."""
    tape = Tape()
    leaves = {k: tape.leaf(v, param=True) for k, v in params.items()}
    state = make_state(tape, cell, state_arrays)
    out, new_state = cell.forward(tape, leaves, tape.leaf(x_np), state)
    return out.value, {name: node.value for name, node in new_state.fields}


def cell_variants(name, rng_seed=5):
    """The bare cell plus wrapped variants that must honor the same contract."""
    bare = make_cell(name, 4, 4)
    eval_drop = wrap(make_cell(name, 4, 4), "dropout", p=0.25, train=False)
    zero_drop = wrap(make_cell(name, 4, 4), "dropout", p=0.0,
                     rng=Rng(rng_seed), train=True)
    residual = wrap(make_cell(name, 4, 4), "residual")
    return [("bare", bare), ("dropout_eval", eval_drop),
            ("dropout_zero", zero_drop), ("residual", residual)]


def assert_cell_contract(cell, seed=1):
    """The uniform cell contract: manifest-faithful creation, zero state,
    forward shapes, determinism, and batch independence."""
    params = cell.create_params(Rng(seed))
    manifest = cell.manifest()
    assert [s.name for s in manifest] == list(params)
    for spec in manifest:
        assert params[spec.name].shape == spec.shape
    again = cell.create_params(Rng(seed))
    for k in params:
        assert np.array_equal(params[k], again[k])

    tape = Tape()
    state = cell.zero_state(tape, 3)
    assert len(state.fields) == len(cell.state_fields)
    for _, node in state.fields:
        assert node.value.shape == (3, cell.hidden_size)
        assert np.all(node.value == 0.0)

    gen = np.random.default_rng(seed)
    x = gen.uniform(-1, 1, (2, cell.input_size))
    st = random_state_arrays(cell, 2, gen)
    out1, new1 = step_once(cell, params, x, st)
    out2, _ = step_once(cell, params, x, st)
    assert out1.shape == (2, cell.hidden_size)
    assert np.array_equal(out1, out2)
    for f in cell.state_fields:
        assert new1[f].shape == (2, cell.hidden_size)
    for row in range(2):
        single, _ = step_once(cell, params, x[row:row + 1],
                              {f: a[row:row + 1] for f, a in st.items()})
        assert np.abs(out1[row] - single[0]).max() < 1e-12


@pytest.fixture
def gen():
    return np.random.default_rng(20240817)
