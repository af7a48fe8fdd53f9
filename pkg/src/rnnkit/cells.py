"""Recurrent cells: one timestep of computation behind a single interface.

Every cell maps (input x, state) -> (output, new state) on a tape, declares
its learnable parameters through `manifest()`, and builds its zero state
through `zero_state()`. The output always aliases the primary hidden state
(the first state field). Cells register themselves by name, so layers,
training, and the CLI see one uniform contract with no per-cell branches.

Notation in the per-cell equations: x is the (B, I) input, h/c/y/z are
(B, H) states, s is the logistic sigmoid, * is elementwise product. Weight
matrices named W_ act on x with shape (H, I), those named U_ act on states
with shape (H, H), and b_ are (H,) bias vectors, unless a cell notes
otherwise. xW' denotes x @ W.T.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import init as inits
from .errors import ContractError, DimensionError
from .init import Init
from .rng import Rng
from .tape import Node, Tape


@dataclass(frozen=True)
class ParamSpec:
    """One manifest entry: name, shape, and how to initialize it."""

    name: str
    shape: tuple[int, ...]
    init: Init


class CellState:
    """Ordered named state tensors sharing one batch extent."""

    __slots__ = ("fields",)

    def __init__(self, fields: tuple[tuple[str, Node], ...]):
        if not fields:
            raise ContractError("a cell state needs at least one tensor")
        batch = fields[0][1].value.shape[0]
        for name, node in fields:
            if node.value.ndim != 2 or node.value.shape[0] != batch:
                raise DimensionError(
                    f"state field {name!r} has shape {node.value.shape}, "
                    f"expected batch extent {batch}")
        self.fields = fields

    @property
    def primary(self) -> Node:
        return self.fields[0][1]

    @property
    def batch(self) -> int:
        return self.fields[0][1].value.shape[0]

    def named(self) -> dict[str, Node]:
        return dict(self.fields)

    def tensors(self) -> tuple[Node, ...]:
        return tuple(node for _, node in self.fields)


REGISTRY: dict[str, type["Cell"]] = {}


def register(cls: type["Cell"]) -> type["Cell"]:
    if cls.name in REGISTRY:
        raise ContractError(f"cell {cls.name!r} already registered")
    REGISTRY[cls.name] = cls
    return cls


class Cell:
    """Base recurrent cell; subclasses define a manifest and one forward step."""

    name: str = ""
    family: str = ""
    state_fields: tuple[str, ...] = ("h",)
    state_kind: str = "single"
    hyperparams: dict[str, float | str] = {}

    def __init__(self, input_size: int, hidden_size: int, **hyper):
        if input_size < 1 or hidden_size < 1:
            raise ContractError(
                f"{self.name}: input_size and hidden_size must be >= 1, "
                f"got {input_size}, {hidden_size}")
        unknown = set(hyper) - set(self.hyperparams)
        if unknown:
            raise ContractError(
                f"{self.name}: unknown hyperparameters {sorted(unknown)}")
        self.input_size = input_size
        self.hidden_size = hidden_size
        self.hyper = {**self.hyperparams, **hyper}
        self._validate()
        self._manifest = tuple(self._build_manifest())
        self._param_names = frozenset(s.name for s in self._manifest)

    def _validate(self) -> None:
        pass

    def _check_activation(self, allowed: tuple[str, ...]) -> None:
        act = self.hyper["activation"]
        if act not in allowed:
            raise ContractError(
                f"{self.name}: activation must be one of {allowed}, got {act!r}")

    def _build_manifest(self) -> list[ParamSpec]:
        raise NotImplementedError

    def manifest(self) -> list[ParamSpec]:
        """Ordered (name, shape, init) entries; the serialization contract."""
        return list(self._manifest)

    def forward(self, tape: Tape, params: dict[str, Node], x: Node,
                state: CellState) -> tuple[Node, CellState]:
        raise NotImplementedError

    # ------------------------------------------------------------- interface

    def zero_state(self, tape: Tape, batch: int) -> CellState:
        if batch < 1:
            raise ContractError(f"{self.name}: batch size must be >= 1")
        zeros = np.zeros((batch, self.hidden_size))
        return CellState(tuple(
            (name, tape.leaf(zeros)) for name in self.state_fields))

    def create_params(self, rng: Rng) -> dict[str, np.ndarray]:
        """Initialize the full manifest, consuming rng in manifest order."""
        return {spec.name: inits.initialize(spec.init, spec.shape, rng)
                for spec in self._manifest}

    def param_count(self) -> int:
        return sum(int(np.prod(s.shape)) for s in self._manifest)

    def check_params(self, params: dict[str, Node]) -> None:
        if set(params) != self._param_names:
            missing = self._param_names - set(params)
            extra = set(params) - self._param_names
            raise ContractError(
                f"{self.name}: parameter set mismatch (missing {sorted(missing)}, "
                f"extra {sorted(extra)})")
        for spec in self._manifest:
            got = params[spec.name].value.shape
            if got != spec.shape:
                raise DimensionError(
                    f"{self.name}: parameter {spec.name} has shape {got}, "
                    f"expected {spec.shape}")

    def check_step(self, params: dict[str, Node], x: Node, state: CellState) -> None:
        self.check_params(params)
        if x.value.ndim != 2 or x.value.shape[1] != self.input_size:
            raise DimensionError(
                f"{self.name}: input shape {x.value.shape} does not match "
                f"input_size {self.input_size}")
        if state.batch != x.value.shape[0]:
            raise DimensionError(
                f"{self.name}: batch mismatch between input {x.value.shape} "
                f"and state batch {state.batch}")
        for name, node in state.fields:
            if node.value.shape[1] != self.hidden_size:
                raise DimensionError(
                    f"{self.name}: state field {name!r} has shape "
                    f"{node.value.shape}, expected (B, {self.hidden_size})")

    # --------------------------------------------------------------- helpers

    def _uf(self) -> Init:
        # Library convention: fan bound 1/sqrt(hidden) for all default params.
        return inits.uniform_fan(self.hidden_size)

    def _mats(self) -> tuple[int, int]:
        return self.hidden_size, self.input_size


def _gate_triplets(cell: Cell, gates: str) -> list[ParamSpec]:
    h, i = cell._mats()
    specs = []
    for g in gates.split():
        specs += [ParamSpec(f"W_{g}", (h, i), cell._uf()),
                  ParamSpec(f"U_{g}", (h, h), cell._uf()),
                  ParamSpec(f"b_{g}", (h,), cell._uf())]
    return specs


def _fused(tape: Tape, x: Node, params: dict[str, Node], names: list[str]) -> Node:
    """x @ concat(params).T; concat_rows is memoized per tape, so repeated
    steps of a scan share one fused matrix."""
    return tape.linear(x, tape.concat_rows([params[n] for n in names]))


def _lstm_gates(hsz: int, tape: Tape, params: dict[str, Node], x: Node,
                rec: Node) -> tuple[Node, Node, Node, Node]:
    """Fused i/f/g/o pre-activations shared by the LSTM-family cells."""
    pre = tape.add(tape.add(
        _fused(tape, x, params, ["W_i", "W_f", "W_g", "W_o"]),
        _fused(tape, rec, params, ["U_i", "U_f", "U_g", "U_o"])),
        tape.concat_rows([params["b_i"], params["b_f"],
                          params["b_g"], params["b_o"]]))
    return (tape.slice_cols(pre, 0, hsz),
            tape.slice_cols(pre, hsz, 2 * hsz),
            tape.slice_cols(pre, 2 * hsz, 3 * hsz),
            tape.slice_cols(pre, 3 * hsz, 4 * hsz))


@register
class ElmanCell(Cell):
    """Plain recurrence: h' = act(xW' + hU' + b), act in {tanh, relu}.

    Learnable parameters: W (H, I), U (H, H), b (H,).
    """

    name = "elman"
    family = "alternative-integration"
    hyperparams = {"activation": "tanh"}

    def _validate(self):
        self._check_activation(("tanh", "relu"))

    def _build_manifest(self):
        h, i = self._mats()
        return [ParamSpec("W", (h, i), self._uf()),
                ParamSpec("U", (h, h), self._uf()),
                ParamSpec("b", (h,), self._uf())]

    def forward(self, tape, params, x, state):
        h = state.primary
        pre = tape.add(tape.add(tape.linear(x, params["W"]),
                                tape.linear(h, params["U"])), params["b"])
        out = tape.unary(self.hyper["activation"], pre)
        return out, CellState((("h", out),))


@register
class LstmCell(Cell):
    """Long short-term memory with input, forget, candidate, and output gates.

        i = s(xW_i' + hU_i' + b_i)      f = s(xW_f' + hU_f' + b_f)
        g = tanh(xW_g' + hU_g' + b_g)   o = s(xW_o' + hU_o' + b_o)
        c' = f * c + i * g              h' = o * tanh(c')

    Learnable parameters, in gate order i, f, g, o: W_* (H, I), U_* (H, H),
    b_* (H,).
    """

    name = "lstm"
    family = "gated"
    state_fields = ("h", "c")
    state_kind = "double"

    def _build_manifest(self):
        return _gate_triplets(self, "i f g o")

    def forward(self, tape, params, x, state):
        h, c = state.tensors()
        pi, pf, pg, po = _lstm_gates(self.hidden_size, tape, params, x, h)
        i, f = tape.sigmoid(pi), tape.sigmoid(pf)
        g, o = tape.tanh(pg), tape.sigmoid(po)
        c2 = tape.add(tape.mul(f, c), tape.mul(i, g))
        h2 = tape.mul(o, tape.tanh(c2))
        return h2, CellState((("h", h2), ("c", c2)))


@register
class PeepholeLstmCell(Cell):
    """LSTM whose gates also see the cell state directly.

        i = s(xW_i' + hU_i' + p_i * c + b_i)
        f = s(xW_f' + hU_f' + p_f * c + b_f)
        g = tanh(xW_g' + hU_g' + b_g)
        c' = f * c + i * g
        o = s(xW_o' + hU_o' + p_o * c' + b_o)   (post-update cell)
        h' = o * tanh(c')

    Learnable parameters: the LSTM set plus peephole vectors p_i, p_f, p_o (H,).
    """

    name = "peephole_lstm"
    family = "gated"
    state_fields = ("h", "c")
    state_kind = "double"

    def _build_manifest(self):
        h = self.hidden_size
        return _gate_triplets(self, "i f g o") + [
            ParamSpec("p_i", (h,), self._uf()),
            ParamSpec("p_f", (h,), self._uf()),
            ParamSpec("p_o", (h,), self._uf())]

    def forward(self, tape, params, x, state):
        h, c = state.tensors()
        pi, pf, pg, po = _lstm_gates(self.hidden_size, tape, params, x, h)
        i = tape.sigmoid(tape.add(pi, tape.mul(c, params["p_i"])))
        f = tape.sigmoid(tape.add(pf, tape.mul(c, params["p_f"])))
        g = tape.tanh(pg)
        c2 = tape.add(tape.mul(f, c), tape.mul(i, g))
        o = tape.sigmoid(tape.add(po, tape.mul(c2, params["p_o"])))
        h2 = tape.mul(o, tape.tanh(c2))
        return h2, CellState((("h", h2), ("c", c2)))


@register
class GruCell(Cell):
    """Gated recurrent unit, reset gate applied after the hidden projection.

        r = s(xW_r' + hU_r' + b_r)
        z = s(xW_z' + hU_z' + b_z)
        n = tanh(xW_n' + b_n + r * (hU_n' + b_hn))
        h' = (1 - z) * n + z * h

    Learnable parameters: W_r, U_r, b_r, W_z, U_z, b_z, W_n, b_n, U_n, b_hn.
    """

    name = "gru"
    family = "gated"

    def _build_manifest(self):
        h, i = self._mats()
        return [ParamSpec("W_r", (h, i), self._uf()),
                ParamSpec("U_r", (h, h), self._uf()),
                ParamSpec("b_r", (h,), self._uf()),
                ParamSpec("W_z", (h, i), self._uf()),
                ParamSpec("U_z", (h, h), self._uf()),
                ParamSpec("b_z", (h,), self._uf()),
                ParamSpec("W_n", (h, i), self._uf()),
                ParamSpec("b_n", (h,), self._uf()),
                ParamSpec("U_n", (h, h), self._uf()),
                ParamSpec("b_hn", (h,), self._uf())]

    def forward(self, tape, params, x, state):
        h = state.primary
        hsz = self.hidden_size
        xpre = tape.add(_fused(tape, x, params, ["W_r", "W_z", "W_n"]),
                        tape.concat_rows([params["b_r"], params["b_z"],
                                          params["b_n"]]))
        hpre = _fused(tape, h, params, ["U_r", "U_z", "U_n"])
        r = tape.sigmoid(tape.add(tape.slice_cols(xpre, 0, hsz),
                                  tape.slice_cols(hpre, 0, hsz)))
        z = tape.sigmoid(tape.add(tape.slice_cols(xpre, hsz, 2 * hsz),
                                  tape.slice_cols(hpre, hsz, 2 * hsz)))
        hn = tape.add(tape.slice_cols(hpre, 2 * hsz, 3 * hsz), params["b_hn"])
        n = tape.tanh(tape.add(tape.slice_cols(xpre, 2 * hsz, 3 * hsz),
                               tape.mul(r, hn)))
        h2 = tape.add(tape.mul(tape.one_minus(z), n), tape.mul(z, h))
        return h2, CellState((("h", h2),))


@register
class MguCell(Cell):
    """Minimal gated unit: one forget gate drives both mixing and feedback.

        f = s(xW_f' + hU_f' + b_f)
        hc = tanh(xW_h' + (f * h)U_h' + b_h)
        h' = (1 - f) * h + f * hc

    Learnable parameters: W_f, U_f, b_f, W_h, U_h, b_h.
    """

    name = "mgu"
    family = "gated"

    def _build_manifest(self):
        return _gate_triplets(self, "f h")

    def forward(self, tape, params, x, state):
        h = state.primary
        hsz = self.hidden_size
        xpre = tape.add(_fused(tape, x, params, ["W_f", "W_h"]),
                        tape.concat_rows([params["b_f"], params["b_h"]]))
        f = tape.sigmoid(tape.add(tape.slice_cols(xpre, 0, hsz),
                                  tape.linear(h, params["U_f"])))
        cand = tape.tanh(tape.add(tape.slice_cols(xpre, hsz, 2 * hsz),
                                  tape.linear(tape.mul(f, h), params["U_h"])))
        h2 = tape.add(tape.mul(tape.one_minus(f), h), tape.mul(f, cand))
        return h2, CellState((("h", h2),))


@register
class IndRnnCell(Cell):
    """Independently recurrent: each unit feeds back only on itself.

        h' = act(xW' + u * h + b),  act in {relu, tanh}

    Learnable parameters: W (H, I), recurrent vector u (H,) drawn from
    U(0, 1) clipped to (0, 1], and b (H,) starting at zero.
    """

    name = "indrnn"
    family = "alternative-integration"
    hyperparams = {"activation": "relu"}

    def _validate(self):
        self._check_activation(("relu", "tanh"))

    def _build_manifest(self):
        h, i = self._mats()
        return [ParamSpec("W", (h, i), self._uf()),
                ParamSpec("u", (h,), inits.unit_uniform()),
                ParamSpec("b", (h,), inits.zeros())]

    def forward(self, tape, params, x, state):
        h = state.primary
        pre = tape.add(tape.add(tape.linear(x, params["W"]),
                                tape.mul(h, params["u"])), params["b"])
        out = tape.unary(self.hyper["activation"], pre)
        return out, CellState((("h", out),))


@register
class FastRnnCell(Cell):
    """Residual Elman step weighted by two trainable scalar gates.

        hc = tanh(xW' + hU' + b)
        h' = s(alpha) * hc + s(beta) * h

    Learnable parameters: W, U, b plus raw scalars alpha (init -3) and
    beta (init 3), stored as shape-(1,) tensors.
    """

    name = "fastrnn"
    family = "gated"

    def _build_manifest(self):
        h, i = self._mats()
        return [ParamSpec("W", (h, i), self._uf()),
                ParamSpec("U", (h, h), self._uf()),
                ParamSpec("b", (h,), self._uf()),
                ParamSpec("alpha", (1,), inits.constant(-3.0)),
                ParamSpec("beta", (1,), inits.constant(3.0))]

    def forward(self, tape, params, x, state):
        h = state.primary
        cand = tape.tanh(tape.add(tape.add(tape.linear(x, params["W"]),
                                           tape.linear(h, params["U"])),
                                  params["b"]))
        h2 = tape.add(tape.mul(cand, tape.scalar_gate(params["alpha"])),
                      tape.mul(h, tape.scalar_gate(params["beta"])))
        return h2, CellState((("h", h2),))


@register
class FastGrnnCell(Cell):
    """Gated unit sharing one projection between gate and candidate.

        p  = xW' + hU'
        z  = s(p + b_z)
        hc = tanh(p + b_h)
        h' = (s(zeta) * (1 - z) + s(nu)) * hc + z * h

    Learnable parameters: W, U, b_z, b_h plus raw scalars zeta (init 1)
    and nu (init -4).
    """

    name = "fastgrnn"
    family = "gated"

    def _build_manifest(self):
        h, i = self._mats()
        return [ParamSpec("W", (h, i), self._uf()),
                ParamSpec("U", (h, h), self._uf()),
                ParamSpec("b_z", (h,), self._uf()),
                ParamSpec("b_h", (h,), self._uf()),
                ParamSpec("zeta", (1,), inits.constant(1.0)),
                ParamSpec("nu", (1,), inits.constant(-4.0))]

    def forward(self, tape, params, x, state):
        h = state.primary
        p = tape.add(tape.linear(x, params["W"]), tape.linear(h, params["U"]))
        z = tape.sigmoid(tape.add(p, params["b_z"]))
        cand = tape.tanh(tape.add(p, params["b_h"]))
        coeff = tape.add(tape.mul(tape.one_minus(z), tape.scalar_gate(params["zeta"])),
                         tape.scalar_gate(params["nu"]))
        h2 = tape.add(tape.mul(coeff, cand), tape.mul(z, h))
        return h2, CellState((("h", h2),))


@register
class LiGruCell(Cell):
    """Light GRU: no reset gate, rectified candidate, learned bias in place
    of the original batch normalization.

        z  = s(xW_z' + hU_z' + b_z)
        hc = relu(xW_h' + hU_h' + b_h)
        h' = z * h + (1 - z) * hc

    Learnable parameters: W_z, U_z, b_z, W_h, U_h, b_h.
    """

    name = "ligru"
    family = "gated"

    def _build_manifest(self):
        return _gate_triplets(self, "z h")

    def forward(self, tape, params, x, state):
        h = state.primary
        hsz = self.hidden_size
        pre = tape.add(tape.add(_fused(tape, x, params, ["W_z", "W_h"]),
                                _fused(tape, h, params, ["U_z", "U_h"])),
                       tape.concat_rows([params["b_z"], params["b_h"]]))
        z = tape.sigmoid(tape.slice_cols(pre, 0, hsz))
        cand = tape.relu(tape.slice_cols(pre, hsz, 2 * hsz))
        h2 = tape.add(tape.mul(z, h), tape.mul(tape.one_minus(z), cand))
        return h2, CellState((("h", h2),))


@register
class CoRnnCell(Cell):
    """Coupled oscillators discretized by an explicit-in-position Euler step.

    State is (y, z): positions and velocities.

        z' = z + dt * (tanh(yW' + zWt' + xV' + b) - gamma * y - eps * z)
        y' = y + dt * z'

    Output is y'. Learnable parameters: W (H, H), Wt (H, H), V (H, I), b (H,).
    Hyperparameters dt >= 0 (dt = 0 freezes the state), gamma >= 0, eps >= 0.
    """

    name = "cornn"
    family = "physics-inspired"
    state_fields = ("y", "z")
    state_kind = "custom"
    hyperparams = {"dt": 0.05, "gamma": 1.0, "eps": 1.0}

    def _validate(self):
        if self.hyper["dt"] < 0 or self.hyper["gamma"] < 0 or self.hyper["eps"] < 0:
            raise ContractError(
                f"{self.name}: dt, gamma, eps must be >= 0, got {self.hyper}")

    def _build_manifest(self):
        h, i = self._mats()
        return [ParamSpec("W", (h, h), self._uf()),
                ParamSpec("Wt", (h, h), self._uf()),
                ParamSpec("V", (h, i), self._uf()),
                ParamSpec("b", (h,), self._uf())]

    def forward(self, tape, params, x, state):
        y, z = state.tensors()
        dt = tape.const_scalar(float(self.hyper["dt"]))
        gamma = tape.const_scalar(float(self.hyper["gamma"]))
        eps = tape.const_scalar(float(self.hyper["eps"]))
        inner = tape.tanh(tape.add(tape.add(tape.add(
            tape.linear(y, params["W"]),
            tape.linear(z, params["Wt"])),
            tape.linear(x, params["V"])), params["b"]))
        accel = tape.sub(tape.sub(inner, tape.mul(y, gamma)), tape.mul(z, eps))
        z2 = tape.add(z, tape.mul(accel, dt))
        y2 = tape.add(y, tape.mul(z2, dt))
        return y2, CellState((("y", y2), ("z", z2)))


@register
class LemCell(Cell):
    """Long expressive memory: two learned multiscale step sizes gate a
    fast and a slow state.

        d1 = dt_max * s(xW_1' + hU_1' + b_1)
        d2 = dt_max * s(xW_2' + hU_2' + b_2)
        z' = (1 - d1) * z + d1 * tanh(xW_z' + hU_z' + b_z)
        h' = (1 - d2) * h + d2 * tanh(xW_h' + z'U_h' + b_h)

    Learnable parameters: W_1, U_1, b_1, W_2, U_2, b_2, W_z, U_z, b_z,
    W_h, U_h, b_h. Hyperparameter dt_max > 0.
    """

    name = "lem"
    family = "physics-inspired"
    state_fields = ("h", "z")
    state_kind = "double"
    hyperparams = {"dt_max": 1.0}

    def _validate(self):
        if self.hyper["dt_max"] <= 0:
            raise ContractError(
                f"{self.name}: dt_max must be > 0, got {self.hyper['dt_max']}")

    def _build_manifest(self):
        return _gate_triplets(self, "1 2 z h")

    def forward(self, tape, params, x, state):
        h, z = state.tensors()
        hsz = self.hidden_size
        dt_max = float(self.hyper["dt_max"])
        xpre = tape.add(_fused(tape, x, params, ["W_1", "W_2", "W_z", "W_h"]),
                        tape.concat_rows([params["b_1"], params["b_2"],
                                          params["b_z"], params["b_h"]]))
        hpre = _fused(tape, h, params, ["U_1", "U_2", "U_z"])
        def xs(k):
            return tape.slice_cols(xpre, k * hsz, (k + 1) * hsz)
        def hs(k):
            return tape.slice_cols(hpre, k * hsz, (k + 1) * hsz)
        d1 = tape.sigmoid(tape.add(xs(0), hs(0)))
        d2 = tape.sigmoid(tape.add(xs(1), hs(1)))
        if dt_max != 1.0:
            c = tape.const_scalar(dt_max)
            d1, d2 = tape.mul(d1, c), tape.mul(d2, c)
        z2 = tape.add(tape.mul(tape.one_minus(d1), z),
                      tape.mul(d1, tape.tanh(tape.add(xs(2), hs(2)))))
        h2 = tape.add(tape.mul(tape.one_minus(d2), h),
                      tape.mul(d2, tape.tanh(tape.add(
                          xs(3), tape.linear(z2, params["U_h"])))))
        return h2, CellState((("h", h2), ("z", z2)))


@register
class AntisymmetricRnnCell(Cell):
    """Euler step on a recurrence whose effective matrix W - W' - gamma*I
    is antisymmetric up to the stabilizing -gamma*I shift.

        h' = h + eps_step * tanh(h(W - W' - gamma*I)' + xV' + b)

    Learnable parameters: W (H, H) gaussian scaled by 1/H, V (H, I), b (H,).
    Hyperparameters eps_step >= 0, gamma >= 0.
    """

    name = "antisymmetric"
    family = "physics-inspired"
    hyperparams = {"eps_step": 0.01, "gamma": 0.01}

    def _validate(self):
        if self.hyper["eps_step"] < 0 or self.hyper["gamma"] < 0:
            raise ContractError(
                f"{self.name}: eps_step and gamma must be >= 0, got {self.hyper}")

    def _build_manifest(self):
        h, i = self._mats()
        return [ParamSpec("W", (h, h), inits.gaussian_scaled(1.0 / h)),
                ParamSpec("V", (h, i), self._uf()),
                ParamSpec("b", (h,), self._uf())]

    def effective_matrix(self, params: dict[str, np.ndarray]) -> np.ndarray:
        """The recurrent matrix A = W - W' - gamma*I actually applied to h."""
        w = params["W"]
        return w - w.T - float(self.hyper["gamma"]) * np.eye(w.shape[0])

    def forward(self, tape, params, x, state):
        h = state.primary
        gamma = tape.const_scalar(float(self.hyper["gamma"]))
        eps = tape.const_scalar(float(self.hyper["eps_step"]))
        # h @ A.T with A = W - W.T - gamma*I, kept in factored form so the
        # gradient reaches W through both products.
        rec = tape.sub(tape.sub(tape.linear(h, params["W"]),
                                tape.matmul(h, params["W"])),
                       tape.mul(h, gamma))
        pre = tape.add(tape.add(rec, tape.linear(x, params["V"])), params["b"])
        h2 = tape.add(h, tape.mul(tape.tanh(pre), eps))
        return h2, CellState((("h", h2),))


@register
class MLstmCell(Cell):
    """Multiplicative LSTM: gates read an input-modulated intermediate state
    m = (xW_mx') * (hW_mh') instead of h.

        m = (xW_mx') * (hW_mh')
        i, f, g, o as in the LSTM with h replaced by m
        c' = f * c + i * g,  h' = o * tanh(c')

    Learnable parameters: the LSTM set plus W_mx (H, I) and W_mh (H, H).
    """

    name = "mlstm"
    family = "alternative-integration"
    state_fields = ("h", "c")
    state_kind = "double"

    def _build_manifest(self):
        h, i = self._mats()
        return _gate_triplets(self, "i f g o") + [
            ParamSpec("W_mx", (h, i), self._uf()),
            ParamSpec("W_mh", (h, h), self._uf())]

    def forward(self, tape, params, x, state):
        h, c = state.tensors()
        m = tape.mul(tape.linear(x, params["W_mx"]),
                     tape.linear(h, params["W_mh"]))
        pi, pf, pg, po = _lstm_gates(self.hidden_size, tape, params, x, m)
        i, f = tape.sigmoid(pi), tape.sigmoid(pf)
        g, o = tape.tanh(pg), tape.sigmoid(po)
        c2 = tape.add(tape.mul(f, c), tape.mul(i, g))
        h2 = tape.mul(o, tape.tanh(c2))
        return h2, CellState((("h", h2), ("c", c2)))


# ---------------------------------------------------------------- module API

def make_cell(name: str, input_size: int, hidden_size: int,
              hyper: dict | None = None, **kwargs) -> Cell:
    if name not in REGISTRY:
        raise ContractError(
            f"unknown cell {name!r}; available: {', '.join(REGISTRY)}")
    merged = {**(hyper or {}), **kwargs}
    return REGISTRY[name](input_size, hidden_size, **merged)


def create_cell(cell: Cell, rng: Rng) -> dict[str, np.ndarray]:
    """Parameters for a cell, initialized per its manifest."""
    return cell.create_params(rng)


def zero_state(cell: Cell, tape: Tape, batch: int) -> CellState:
    return cell.zero_state(tape, batch)


def cell_forward(cell: Cell, tape: Tape, params: dict[str, Node], x: Node,
                 state: CellState) -> tuple[Node, CellState]:
    cell.check_step(params, x, state)
    return cell.forward(tape, params, x, state)


def parameter_manifest(cell: Cell) -> list[ParamSpec]:
    return cell.manifest()


def cell_names() -> list[str]:
    return list(REGISTRY)
