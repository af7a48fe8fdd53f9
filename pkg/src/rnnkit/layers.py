"""Recurrence drivers and wrappers: run cells across full sequences.

scan folds a cell over a time-major block, threading state; bidirectional
scan runs one cell per direction and concatenates features; stacked_forward
composes layers with optional inter-layer inverted dropout and residual
connections. Wrappers transform a cell while keeping its interface, so a
wrapped cell drops into any driver unchanged.

Variable-length batches use mask-and-carry semantics: past a row's length
the state is carried unchanged and the emitted output is zero.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cells import Cell, CellState, make_cell
from .errors import ContractError, DimensionError
from .rng import Rng
from .tape import Node, Tape


class SequenceBatch:
    """Time-major (T, B, F) block with optional per-row valid lengths."""

    def __init__(self, data: np.ndarray, lengths=None):
        data = np.asarray(data, dtype=np.float64)
        if data.ndim != 3 or data.shape[0] < 1:
            raise DimensionError(
                f"sequence batches are (T, B, F) with T >= 1, got {data.shape}")
        self.data = data
        if lengths is not None:
            lengths = np.asarray(lengths, dtype=np.int64)
            t, b, _ = data.shape
            if lengths.shape != (b,) or lengths.min() < 1 or lengths.max() > t:
                raise ContractError(
                    f"lengths must be (B,) within [1, {t}], got {lengths}")
        self.lengths = lengths

    @property
    def shape(self):
        return self.data.shape


class ScanResult:
    """Per-step outputs plus the final state; stacks lazily on demand."""

    def __init__(self, tape: Tape, steps: list[Node], state):
        self.tape = tape
        self.steps = steps
        self.state = state
        self._stacked: Node | None = None

    @property
    def outputs(self) -> Node:
        """The (T, B, F) stacked output block."""
        if self._stacked is None:
            self._stacked = self.tape.stack_rows(self.steps)
        return self._stacked


def _as_steps(tape: Tape, inputs) -> tuple[list[Node], np.ndarray | None]:
    if isinstance(inputs, ScanResult):
        return inputs.steps, None
    if isinstance(inputs, SequenceBatch):
        return [tape.leaf(inputs.data[t]) for t in range(inputs.data.shape[0])], \
            inputs.lengths
    if isinstance(inputs, np.ndarray):
        return _as_steps(tape, SequenceBatch(inputs))
    if isinstance(inputs, (list, tuple)) and inputs and isinstance(inputs[0], Node):
        return list(inputs), None
    raise ContractError(f"cannot scan over inputs of type {type(inputs).__name__}")


def _step_masks(tape: Tape, lengths: np.ndarray, t: int, batch: int,
                width: int) -> tuple[Node, Node] | None:
    valid = (t < lengths)
    if valid.all():
        return None
    m = np.broadcast_to(valid.astype(np.float64)[:, None], (batch, width)).copy()
    return tape.leaf(m), tape.leaf(1.0 - m)


def scan(cell: Cell, tape: Tape, params: dict[str, Node], inputs,
         state0: CellState | None = None, lengths=None) -> ScanResult:
    """Left fold of the cell across time.

    inputs: SequenceBatch, a raw (T, B, F) array, a list of per-step nodes,
    or a previous ScanResult. Returns per-step outputs and the final state.
    """
    steps, batch_lengths = _as_steps(tape, inputs)
    if lengths is None:
        lengths = batch_lengths
    feat = steps[0].value.shape[-1]
    if feat != cell.input_size:
        raise DimensionError(
            f"scan: input feature size {feat} does not match "
            f"{cell.name} input_size {cell.input_size}")
    batch = steps[0].value.shape[0]
    state = cell.zero_state(tape, batch) if state0 is None else state0
    cell.check_step(params, steps[0], state)

    outputs: list[Node] = []
    width = cell.hidden_size
    for t, x_t in enumerate(steps):
        out, new_state = cell.forward(tape, params, x_t, state)
        if lengths is not None:
            masks = _step_masks(tape, lengths, t, batch, width)
            if masks is not None:
                keep, drop = masks
                out = tape.mul(out, keep)
                merged = tuple(
                    (name, tape.add(tape.mul(new, keep), tape.mul(old, drop)))
                    for (name, new), (_, old)
                    in zip(new_state.fields, state.fields))
                new_state = CellState(merged)
        outputs.append(out)
        state = new_state
    return ScanResult(tape, outputs, state)


class BidirResult:
    """Forward/backward scan pair with per-step concatenated outputs."""

    def __init__(self, tape: Tape, steps: list[Node], state_fwd, state_bwd):
        self.tape = tape
        self.steps = steps
        self.state_fwd = state_fwd
        self.state_bwd = state_bwd
        self._stacked: Node | None = None

    @property
    def outputs(self) -> Node:
        if self._stacked is None:
            self._stacked = self.tape.stack_rows(self.steps)
        return self._stacked


def bidirectional_scan(cell_fwd: Cell, cell_bwd: Cell, tape: Tape,
                       params_fwd: dict[str, Node], params_bwd: dict[str, Node],
                       inputs, lengths=None) -> BidirResult:
    """Scan both time directions and concatenate features to (T, B, 2H)."""
    if (type(cell_fwd) is not type(cell_bwd)
            or cell_fwd.input_size != cell_bwd.input_size
            or cell_fwd.hidden_size != cell_bwd.hidden_size
            or cell_fwd.hyper != cell_bwd.hyper):
        raise ContractError(
            "bidirectional_scan: the two directions must share cell kind, "
            f"sizes, and hyperparameters ({cell_fwd.name} vs {cell_bwd.name})")
    steps, batch_lengths = _as_steps(tape, inputs)
    if lengths is None:
        lengths = batch_lengths

    fwd = scan(cell_fwd, tape, params_fwd, steps, lengths=lengths)
    if lengths is None:
        rev_steps = list(reversed(steps))
        bwd = scan(cell_bwd, tape, params_bwd, rev_steps)
        bwd_steps = list(reversed(bwd.steps))
    else:
        # Reverse each row's valid prefix, scan, then undo the (involutive)
        # permutation on the stacked outputs.
        stacked_in = tape.stack_rows(steps)
        rev_in = tape.reverse_time(stacked_in, lengths)
        rev_steps = [tape.slice_time(rev_in, t) for t in range(len(steps))]
        bwd = scan(cell_bwd, tape, params_bwd, rev_steps, lengths=lengths)
        restored = tape.reverse_time(tape.stack_rows(bwd.steps), lengths)
        bwd_steps = [tape.slice_time(restored, t) for t in range(len(steps))]

    merged = [tape.concat_cols([f, b]) for f, b in zip(fwd.steps, bwd_steps)]
    return BidirResult(tape, merged, fwd.state, bwd.state)


# -------------------------------------------------------------- cell wrappers

class CellWrapper(Cell):
    """Adapter base: delegates the whole cell contract to the wrapped cell."""

    def __init__(self, inner: Cell):
        self.inner = inner
        self.name = inner.name
        self.family = inner.family
        self.state_fields = inner.state_fields
        self.state_kind = inner.state_kind
        self.input_size = inner.input_size
        self.hidden_size = inner.hidden_size
        self.hyper = inner.hyper
        self._manifest = inner._manifest
        self._param_names = inner._param_names

    def _build_manifest(self):
        return self.inner.manifest()

    def forward(self, tape, params, x, state):
        return self.inner.forward(tape, params, x, state)


class DropoutCell(CellWrapper):
    """Inverted dropout on the cell output; identity when not training."""

    def __init__(self, inner: Cell, p: float, rng: Rng | None = None,
                 train: bool = False):
        if not 0.0 <= p < 1.0:
            raise ContractError(f"dropout rate must be in [0, 1), got {p}")
        super().__init__(inner)
        self.p = p
        self.rng = rng
        self.train = train

    def forward(self, tape, params, x, state):
        out, new_state = self.inner.forward(tape, params, x, state)
        if self.train and self.p > 0.0:
            if self.rng is None:
                raise ContractError("training-mode dropout needs an rng")
            mask = dropout_mask(self.rng, out.value.shape, self.p)
            out = tape.mul(out, tape.leaf(mask))
        return out, new_state


class ResidualCell(CellWrapper):
    """Adds the step input to the step output; needs matching feature sizes."""

    def __init__(self, inner: Cell):
        if inner.input_size != inner.hidden_size:
            raise ContractError(
                f"residual wrapper needs input_size == hidden_size, got "
                f"{inner.input_size} != {inner.hidden_size}")
        super().__init__(inner)

    def forward(self, tape, params, x, state):
        out, new_state = self.inner.forward(tape, params, x, state)
        return tape.add(out, x), new_state


def wrap(cell: Cell, wrapper: str, **kwargs) -> Cell:
    """Wrap a cell; the result satisfies the same interface and composes."""
    if wrapper == "dropout":
        return DropoutCell(cell, **kwargs)
    if wrapper == "residual":
        return ResidualCell(cell)
    raise ContractError(f"unknown wrapper {wrapper!r}")


def dropout_mask(rng: Rng, shape: tuple[int, ...], p: float) -> np.ndarray:
    """Inverted-dropout mask: keep with probability 1-p, scaled by 1/(1-p).

    Bulk randomness comes from a PCG64 stream seeded by one draw from the
    deterministic rng, so masks stay reproducible at array speed.
    """
    gen = np.random.Generator(np.random.PCG64(rng.next_u64()))
    keep = (gen.random(shape) >= p)
    return keep.astype(np.float64) / (1.0 - p)


# -------------------------------------------------------------------- stacks

@dataclass
class LayerSpec:
    """Configuration of a (possibly stacked, possibly bidirectional) driver."""

    cell_name: str
    input_size: int
    hidden_size: int
    hyper: dict = field(default_factory=dict)
    direction: str = "forward"
    layers: int = 1
    dropout: float = 0.0
    residual: bool = False

    def __post_init__(self):
        if self.direction not in ("forward", "bidirectional"):
            raise ContractError(f"unknown direction {self.direction!r}")
        if self.layers < 1:
            raise ContractError(f"layer stack depth must be >= 1, got {self.layers}")
        if not 0.0 <= self.dropout < 1.0:
            raise ContractError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.residual and self.input_size != self.layer_output_size():
            raise ContractError(
                f"residual stacking needs input feature size {self.input_size} "
                f"to equal layer output size {self.layer_output_size()}")

    def layer_output_size(self) -> int:
        return self.hidden_size * (2 if self.direction == "bidirectional" else 1)

    def layer_input_size(self, layer: int) -> int:
        return self.input_size if layer == 0 else self.layer_output_size()

    def build_cells(self) -> list[tuple[Cell, ...]]:
        """One (fwd,) or (fwd, bwd) cell pair per stacked layer."""
        out = []
        for l in range(self.layers):
            size = self.layer_input_size(l)
            if self.direction == "bidirectional":
                out.append((make_cell(self.cell_name, size, self.hidden_size, self.hyper),
                            make_cell(self.cell_name, size, self.hidden_size, self.hyper)))
            else:
                out.append((make_cell(self.cell_name, size, self.hidden_size, self.hyper),))
        return out

    @property
    def output_size(self) -> int:
        return self.layer_output_size()


class StackResult:
    """Final-layer per-step outputs plus every layer's final state tuple."""

    def __init__(self, tape: Tape, steps: list[Node], states: list[tuple]):
        self.tape = tape
        self.steps = steps
        self.states = states
        self._stacked: Node | None = None

    @property
    def outputs(self) -> Node:
        if self._stacked is None:
            self._stacked = self.tape.stack_rows(self.steps)
        return self._stacked


def stacked_forward(spec: LayerSpec, tape: Tape,
                    layer_params: list[tuple[dict, ...]], inputs,
                    train_mode: bool = False,
                    drop_rng: Rng | None = None) -> StackResult:
    """Compose the stack: scan each layer, inverted dropout between layers
    (train mode only), residual add around each layer when enabled."""
    cells = spec.build_cells()
    if len(layer_params) != len(cells):
        raise DimensionError(
            f"stack of {len(cells)} layers received {len(layer_params)} "
            "parameter sets")
    steps, lengths = _as_steps(tape, inputs)
    final_states: list[tuple] = []
    for l, (cell_pair, param_pair) in enumerate(zip(cells, layer_params)):
        feat = steps[0].value.shape[-1]
        if feat != cell_pair[0].input_size:
            raise DimensionError(
                f"layer {l}: input feature size {feat} does not match "
                f"cell input_size {cell_pair[0].input_size}")
        for cell, pset in zip(cell_pair, param_pair):
            try:
                cell.check_params(pset)
            except (DimensionError, ContractError) as exc:
                raise type(exc)(f"layer {l}: {exc}") from exc
        if l > 0 and train_mode and spec.dropout > 0.0:
            if drop_rng is None:
                raise ContractError("training-mode dropout needs an rng")
            steps = [tape.mul(s, tape.leaf(
                dropout_mask(drop_rng, s.value.shape, spec.dropout)))
                for s in steps]
        if len(cell_pair) == 2:
            result = bidirectional_scan(cell_pair[0], cell_pair[1], tape,
                                        param_pair[0], param_pair[1], steps,
                                        lengths=lengths)
            final_states.append((result.state_fwd, result.state_bwd))
        else:
            result = scan(cell_pair[0], tape, param_pair[0], steps,
                          lengths=lengths)
            final_states.append((result.state,))
        out_steps = result.steps
        if spec.residual:
            out_steps = [tape.add(o, i) for o, i in zip(out_steps, steps)]
        steps = out_steps
    return StackResult(tape, steps, final_states)


def create_stack_params(spec: LayerSpec, rng: Rng) -> list[tuple[dict, ...]]:
    """Initialize every layer's parameters in stack order (fwd then bwd)."""
    out = []
    for cell_pair in spec.build_cells():
        out.append(tuple(cell.create_params(rng) for cell in cell_pair))
    return out
