"""Scan, bidirectional, stacking, and wrapper contracts."""

import numpy as np
import pytest

from conftest import ALL_CELLS, make_state

from rnnkit.cells import CellState, make_cell
from rnnkit.errors import ContractError, DimensionError
from rnnkit.layers import (LayerSpec, SequenceBatch, bidirectional_scan,
                           create_stack_params, dropout_mask, scan,
                           stacked_forward, wrap)
from rnnkit.rng import Rng
from rnnkit.tape import Tape, grad_check

from reference_cells import REFERENCE


def leaves_for(tape, params):
    return {k: tape.leaf(v, param=True) for k, v in params.items()}


# ------------------------------------------------------------------- scan


@pytest.mark.parametrize("name", ALL_CELLS)
def test_scan_equals_external_loop(name):
    """Criterion-3 sizes: T=16, B=4, H=8; oracle is the reference equations."""
    cell = make_cell(name, 8, 8)
    params = cell.create_params(Rng(30))
    data = np.random.default_rng(31).uniform(-1, 1, (16, 4, 8))
    tape = Tape()
    result = scan(cell, tape, leaves_for(tape, params), data)

    state = {f: np.zeros((4, 8)) for f in cell.state_fields}
    expected = []
    for t in range(16):
        out, state = REFERENCE[name](params, data[t], state, cell.hyper)
        expected.append(out)
    assert np.abs(result.outputs.value - np.stack(expected)).max() < 1e-12


def test_scan_t1_is_bitexact_single_step():
    cell = make_cell("lstm", 3, 5)
    params = cell.create_params(Rng(32))
    x = np.random.default_rng(33).uniform(-1, 1, (1, 2, 3))
    tape = Tape()
    result = scan(cell, tape, leaves_for(tape, params), x)
    tape2 = Tape()
    lv = leaves_for(tape2, params)
    out, _ = cell.forward(tape2, lv, tape2.leaf(x[0]), cell.zero_state(tape2, 2))
    assert np.array_equal(result.steps[0].value, out.value)


def test_scan_elman_tiny_weights_matches_affine_recursion():
    cell = make_cell("elman", 3, 3)
    gen = np.random.default_rng(34)
    params = {"W": 1e-8 * gen.uniform(-1, 1, (3, 3)),
              "U": 1e-8 * gen.uniform(-1, 1, (3, 3)),
              "b": 1e-8 * gen.uniform(-1, 1, 3)}
    data = gen.uniform(-1, 1, (6, 2, 3))
    tape = Tape()
    result = scan(cell, tape, leaves_for(tape, params), data)
    h = np.zeros((2, 3))
    outs = []
    for t in range(6):  # affine surrogate: tanh(u) == u at this scale
        h = data[t] @ params["W"].T + h @ params["U"].T + params["b"]
        outs.append(h)
    assert np.abs(result.outputs.value - np.stack(outs)).max() < 1e-12


def test_scan_masking_carries_state_and_zeroes_outputs():
    cell = make_cell("gru", 3, 4)
    params = cell.create_params(Rng(35))
    gen = np.random.default_rng(36)
    batch = SequenceBatch(gen.uniform(-1, 1, (4, 2, 3)), lengths=[2, 4])
    tape = Tape()
    result = scan(cell, tape, leaves_for(tape, params), batch)
    out = result.outputs.value
    assert np.all(out[2:, 0] == 0.0)       # row 0 masked after step 2
    assert not np.all(out[2:, 1] == 0.0)   # row 1 runs to the end

    # final state of row 0 equals the state right after its second step
    tape2 = Tape()
    lv = leaves_for(tape2, params)
    st = cell.zero_state(tape2, 2)
    for t in range(2):
        _, st = cell.forward(tape2, lv, tape2.leaf(batch.data[t]), st)
    assert np.array_equal(result.state.primary.value[0], st.primary.value[0])


def test_scan_feature_mismatch():
    cell = make_cell("elman", 3, 4)
    params = cell.create_params(Rng(37))
    tape = Tape()
    with pytest.raises(DimensionError, match="feature"):
        scan(cell, tape, leaves_for(tape, params), np.zeros((2, 2, 5)))


def test_sequence_batch_validation():
    with pytest.raises(DimensionError):
        SequenceBatch(np.zeros((2, 3)))
    with pytest.raises(ContractError):
        SequenceBatch(np.zeros((2, 3, 1)), lengths=[3, 1])
    with pytest.raises(ContractError):
        SequenceBatch(np.zeros((2, 3, 1)), lengths=[1])


# ---------------------------------------------------------- bidirectional


def test_bidirectional_palindrome_mirrors():
    cell_f = make_cell("gru", 4, 4)
    cell_b = make_cell("gru", 4, 4)
    params = cell_f.create_params(Rng(38))
    gen = np.random.default_rng(39)
    seq = gen.uniform(-1, 1, (5, 2, 4))
    pal = np.concatenate([seq, seq[::-1]], axis=0)
    tape = Tape()
    lv = leaves_for(tape, params)
    result = bidirectional_scan(cell_f, cell_b, tape, lv, lv, pal)
    out = result.outputs.value
    assert np.abs(out[..., :4] - out[..., 4:][::-1]).max() < 1e-12


def test_bidirectional_t1_concatenates_two_steps():
    cell_f = make_cell("elman", 3, 4)
    cell_b = make_cell("elman", 3, 4)
    pf = cell_f.create_params(Rng(40))
    pb = cell_b.create_params(Rng(41))
    x = np.random.default_rng(42).uniform(-1, 1, (1, 2, 3))
    tape = Tape()
    result = bidirectional_scan(cell_f, cell_b, tape,
                                leaves_for(tape, pf), leaves_for(tape, pb), x)
    tape2 = Tape()
    of, _ = cell_f.forward(tape2, leaves_for(tape2, pf), tape2.leaf(x[0]),
                           cell_f.zero_state(tape2, 2))
    ob, _ = cell_b.forward(tape2, leaves_for(tape2, pb), tape2.leaf(x[0]),
                           cell_b.zero_state(tape2, 2))
    assert np.array_equal(result.outputs.value[0],
                          np.concatenate([of.value, ob.value], axis=-1))


def test_bidirectional_reversal_swaps_halves():
    """Scanning the reversed sequence swaps the halves up to time reversal."""
    cell_f = make_cell("gru", 3, 5)
    cell_b = make_cell("gru", 3, 5)
    params = cell_f.create_params(Rng(43))
    gen = np.random.default_rng(44)
    seq = gen.uniform(-1, 1, (7, 2, 3))
    tape = Tape()
    lv = leaves_for(tape, params)
    fwd = bidirectional_scan(cell_f, cell_b, tape, lv, lv, seq).outputs.value
    tape2 = Tape()
    lv2 = leaves_for(tape2, params)
    rev = bidirectional_scan(cell_f, cell_b, tape2, lv2, lv2,
                             np.ascontiguousarray(seq[::-1])).outputs.value
    assert np.abs(rev[..., :5] - fwd[..., 5:][::-1]).max() < 1e-12
    assert np.abs(rev[..., 5:] - fwd[..., :5][::-1]).max() < 1e-12


def test_bidirectional_with_lengths_matches_per_row_oracle():
    cell_f = make_cell("elman", 2, 3)
    cell_b = make_cell("elman", 2, 3)
    pf = cell_f.create_params(Rng(45))
    pb = cell_b.create_params(Rng(46))
    gen = np.random.default_rng(47)
    data = gen.uniform(-1, 1, (5, 2, 2))
    lengths = np.array([3, 5])
    tape = Tape()
    result = bidirectional_scan(cell_f, cell_b, tape, leaves_for(tape, pf),
                                leaves_for(tape, pb), data, lengths=lengths)
    got = result.outputs.value

    for row, n in enumerate(lengths):
        # forward half: plain scan over the row's valid prefix
        h = np.zeros((1, 3))
        for t in range(n):
            h, _ = REFERENCE["elman"](pf, data[t, row:row + 1], {"h": h},
                                      cell_f.hyper)
            assert np.abs(got[t, row, :3] - h[0]).max() < 1e-12
        # backward half: scan of the reversed prefix, re-reversed
        h = np.zeros((1, 3))
        back = []
        for t in range(n - 1, -1, -1):
            h, _ = REFERENCE["elman"](pb, data[t, row:row + 1], {"h": h},
                                      cell_b.hyper)
            back.append(h[0])
        for t, vec in enumerate(reversed(back)):
            assert np.abs(got[t, row, 3:] - vec).max() < 1e-12
        assert np.all(got[n:, row] == 0.0)


def test_bidirectional_spec_mismatch():
    tape = Tape()
    with pytest.raises(ContractError):
        bidirectional_scan(make_cell("gru", 3, 4), make_cell("lstm", 3, 4),
                           tape, {}, {}, np.zeros((1, 1, 3)))
    with pytest.raises(ContractError):
        bidirectional_scan(make_cell("gru", 3, 4), make_cell("gru", 3, 5),
                           tape, {}, {}, np.zeros((1, 1, 3)))


# ----------------------------------------------------------------- stacks


def test_stack_depth_one_equals_scan():
    spec = LayerSpec("ligru", 3, 4)
    params = create_stack_params(spec, Rng(48))
    data = np.random.default_rng(49).uniform(-1, 1, (6, 2, 3))
    tape = Tape()
    nodes = [(leaves_for(tape, params[0][0]),)]
    stack_out = stacked_forward(spec, tape, nodes, data)
    tape2 = Tape()
    plain = scan(make_cell("ligru", 3, 4), tape2,
                 leaves_for(tape2, params[0][0]), data)
    assert np.array_equal(stack_out.outputs.value, plain.outputs.value)


def test_stack_eval_mode_ignores_dropout():
    spec = LayerSpec("elman", 3, 4, layers=2, dropout=0.5)
    params = create_stack_params(spec, Rng(50))
    data = np.random.default_rng(51).uniform(-1, 1, (4, 2, 3))

    def run(train_mode, rng):
        tape = Tape()
        nodes = [tuple(leaves_for(tape, p) for p in pair) for pair in params]
        return stacked_forward(spec, tape, nodes, data, train_mode=train_mode,
                               drop_rng=rng).outputs.value

    assert np.array_equal(run(False, None), run(False, None))
    assert not np.array_equal(run(False, None), run(True, Rng(1)))


def test_stack_residual_around_zero_cell_is_identity():
    spec = LayerSpec("lstm", 4, 4, residual=True)
    cellspec = make_cell("lstm", 4, 4)
    zero_params = {s.name: np.zeros(s.shape) for s in cellspec.manifest()}
    data = np.random.default_rng(52).uniform(-1, 1, (5, 2, 4))
    tape = Tape()
    out = stacked_forward(spec, tape, [(leaves_for(tape, zero_params),)], data)
    assert np.array_equal(out.outputs.value, data)


def test_stack_bidirectional_feeds_doubled_features():
    spec = LayerSpec("gru", 3, 4, direction="bidirectional", layers=2)
    assert spec.layer_input_size(0) == 3
    assert spec.layer_input_size(1) == 8
    params = create_stack_params(spec, Rng(53))
    data = np.random.default_rng(54).uniform(-1, 1, (3, 2, 3))
    tape = Tape()
    nodes = [tuple(leaves_for(tape, p) for p in pair) for pair in params]
    out = stacked_forward(spec, tape, nodes, data)
    assert out.outputs.value.shape == (3, 2, 8)


def test_stack_size_chain_error_names_layer():
    spec = LayerSpec("elman", 3, 4, layers=2)
    params = create_stack_params(spec, Rng(55))
    bad = [params[0], params[0]]  # second layer expects input size 4
    data = np.random.default_rng(56).uniform(-1, 1, (3, 2, 3))
    tape = Tape()
    nodes = [tuple(leaves_for(tape, p) for p in pair) for pair in bad]
    with pytest.raises(DimensionError, match="layer 1"):
        stacked_forward(spec, tape, nodes, data)


def test_residual_spec_requires_matching_sizes():
    with pytest.raises(ContractError):
        LayerSpec("elman", 3, 4, residual=True)
    LayerSpec("elman", 4, 4, residual=True)
    with pytest.raises(ContractError):
        LayerSpec("elman", 4, 4, direction="bidirectional", residual=True)
    LayerSpec("elman", 8, 4, direction="bidirectional", residual=True)


# --------------------------------------------------------------- wrappers


def test_wrap_dropout_zero_is_bit_identical():
    cell = make_cell("gru", 3, 4)
    wrapped = wrap(make_cell("gru", 3, 4), "dropout", p=0.0,
                   rng=Rng(1), train=True)
    params = cell.create_params(Rng(57))
    data = np.random.default_rng(58).uniform(-1, 1, (4, 2, 3))
    tape = Tape()
    a = scan(cell, tape, leaves_for(tape, params), data).outputs.value
    tape2 = Tape()
    b = scan(wrapped, tape2, leaves_for(tape2, params), data).outputs.value
    assert np.array_equal(a, b)


def test_wrap_composes_to_identity_on_zero_cell():
    inner = make_cell("lstm", 4, 4)
    zero_params = {s.name: np.zeros(s.shape) for s in inner.manifest()}
    composed = wrap(wrap(inner, "dropout", p=0.0, rng=Rng(2), train=True),
                    "residual")
    data = np.random.default_rng(59).uniform(-1, 1, (5, 2, 4))
    tape = Tape()
    out = scan(composed, tape, leaves_for(tape, zero_params), data)
    assert np.array_equal(out.outputs.value, data)


def test_wrap_rejects_bad_arguments():
    with pytest.raises(ContractError):
        wrap(make_cell("elman", 3, 4), "residual")  # 3 != 4
    with pytest.raises(ContractError):
        wrap(make_cell("elman", 4, 4), "dropout", p=1.0)
    with pytest.raises(ContractError):
        wrap(make_cell("elman", 4, 4), "nonsense")


def test_dropout_train_requires_rng():
    wrapped = wrap(make_cell("elman", 4, 4), "dropout", p=0.5, train=True)
    tape = Tape()
    lv = leaves_for(tape, make_cell("elman", 4, 4).create_params(Rng(60)))
    with pytest.raises(ContractError, match="rng"):
        wrapped.forward(tape, lv, tape.leaf(np.zeros((1, 4))),
                        wrapped.zero_state(tape, 1))


def test_dropout_mask_is_deterministic_and_mean_preserving():
    masks = [dropout_mask(Rng(123), (8, 8), 0.3) for _ in range(2)]
    assert np.array_equal(masks[0], masks[1])

    rng = Rng(321)
    acts = np.random.default_rng(61).uniform(0.5, 1.5, (4, 8))
    total = np.zeros_like(acts)
    trials = 10_000
    for _ in range(trials):
        total += acts * dropout_mask(rng, acts.shape, 0.3)
    ratio = total.mean() / (trials * acts.mean())
    assert abs(ratio - 1.0) < 0.02


# ------------------------------------------------------------------- BPTT


@pytest.mark.parametrize("name", ALL_CELLS)
def test_bptt_gradcheck_through_scan(name):
    """loss = mean(scan outputs) at T=5, H=I=3 for every cell."""
    cell = make_cell(name, 3, 3)
    params = cell.create_params(Rng(62))
    data = np.random.default_rng(63).uniform(-1, 1, (5, 2, 3))

    def build(tape, leaves):
        return tape.reduce_mean(scan(cell, tape, leaves, data).outputs)

    assert grad_check(build, params) < 1e-5


def test_gradient_flows_through_masked_scan():
    cell = make_cell("gru", 3, 3)
    params = cell.create_params(Rng(64))
    gen = np.random.default_rng(65)
    batch = SequenceBatch(gen.uniform(-1, 1, (4, 2, 3)), lengths=[2, 4])

    def build(tape, leaves):
        return tape.reduce_mean(scan(cell, tape, leaves, batch).outputs)

    assert grad_check(build, params) < 1e-5


def test_gradient_flows_through_bidirectional_with_lengths():
    cell_f = make_cell("elman", 2, 3)
    cell_b = make_cell("elman", 2, 3)
    pf = {f"f_{k}": v for k, v in cell_f.create_params(Rng(66)).items()}
    pb = {f"b_{k}": v for k, v in cell_b.create_params(Rng(67)).items()}
    data = np.random.default_rng(68).uniform(-1, 1, (4, 2, 2))
    lengths = np.array([2, 4])

    def build(tape, leaves):
        lf = {k[2:]: v for k, v in leaves.items() if k.startswith("f_")}
        lb = {k[2:]: v for k, v in leaves.items() if k.startswith("b_")}
        res = bidirectional_scan(cell_f, cell_b, tape, lf, lb, data,
                                 lengths=lengths)
        return tape.reduce_mean(res.outputs)

    assert grad_check(build, {**pf, **pb}) < 1e-5
