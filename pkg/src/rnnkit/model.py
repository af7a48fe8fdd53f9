"""A trainable sequence model: recurrent stack plus a linear readout head.

Parameters live in one flat, ordered dict whose names encode their place in
the stack ("layers.0.W_i", "layers.1.bwd.U_z", "head.W"). That ordering is
the model manifest: the contract between initialization, training,
checkpointing, and evaluation.
"""

from __future__ import annotations

import numpy as np

from . import init as inits
from .errors import ManifestError
from .init import Init
from .layers import LayerSpec, StackResult, stacked_forward
from .rng import Rng
from .tape import Node, Tape


class SequenceModel:
    """LayerSpec-driven stack with a (out, feat) linear head on top."""

    def __init__(self, layer_spec: LayerSpec, out_size: int, rng: Rng,
                 dtype=np.float64):
        self.layer_spec = layer_spec
        self.out_size = out_size
        self.dtype = dtype
        self.manifest: list[tuple[str, tuple[int, ...], Init]] = []
        cells = layer_spec.build_cells()
        for l, pair in enumerate(cells):
            for d, cell in enumerate(pair):
                prefix = f"layers.{l}."
                if len(pair) == 2:
                    prefix += "fwd." if d == 0 else "bwd."
                for spec in cell.manifest():
                    self.manifest.append((prefix + spec.name, spec.shape, spec.init))
        feat = layer_spec.output_size
        self.manifest.append(("head.W", (out_size, feat), inits.uniform_fan(feat)))
        self.manifest.append(("head.b", (out_size,), inits.uniform_fan(feat)))
        self.params: dict[str, np.ndarray] = {
            name: inits.initialize(init, shape, rng).astype(dtype)
            for name, shape, init in self.manifest}

    def manifest_shapes(self) -> list[tuple[str, tuple[int, ...]]]:
        return [(name, shape) for name, shape, _ in self.manifest]

    def param_count(self) -> int:
        return sum(int(np.prod(s)) for _, s, _ in self.manifest)

    def load_params(self, params: dict[str, np.ndarray]) -> None:
        """Adopt checkpointed parameters after verifying the manifest."""
        for name, shape, _ in self.manifest:
            if name not in params:
                raise ManifestError(f"manifest mismatch: missing parameter {name}")
            if params[name].shape != shape:
                raise ManifestError(
                    f"manifest mismatch: parameter {name} has shape "
                    f"{params[name].shape}, expected {shape}")
        extra = set(params) - {name for name, _, _ in self.manifest}
        if extra:
            raise ManifestError(
                f"manifest mismatch: unexpected parameter {sorted(extra)[0]}")
        self.params = {name: params[name].astype(self.dtype)
                       for name, _, _ in self.manifest}

    # ----------------------------------------------------------------- tape

    def leaves(self, tape: Tape) -> dict[str, Node]:
        return {name: tape.leaf(arr, param=True)
                for name, arr in self.params.items()}

    def _layer_param_nodes(self, leaves: dict[str, Node]) -> list[tuple[dict, ...]]:
        out = []
        bidir = self.layer_spec.direction == "bidirectional"
        for l in range(self.layer_spec.layers):
            if bidir:
                fwd = {k.split(".", 3)[3]: v for k, v in leaves.items()
                       if k.startswith(f"layers.{l}.fwd.")}
                bwd = {k.split(".", 3)[3]: v for k, v in leaves.items()
                       if k.startswith(f"layers.{l}.bwd.")}
                out.append((fwd, bwd))
            else:
                fwd = {k.split(".", 2)[2]: v for k, v in leaves.items()
                       if k.startswith(f"layers.{l}.")}
                out.append((fwd,))
        return out

    def run(self, tape: Tape, leaves: dict[str, Node], inputs,
            train_mode: bool = False, drop_rng: Rng | None = None) -> StackResult:
        return stacked_forward(self.layer_spec, tape,
                               self._layer_param_nodes(leaves), inputs,
                               train_mode=train_mode, drop_rng=drop_rng)

    def head_last(self, tape: Tape, leaves: dict[str, Node],
                  result: StackResult) -> Node:
        """Readout of the final step output: (B, out)."""
        return tape.add(tape.linear(result.steps[-1], leaves["head.W"]),
                        leaves["head.b"])

    def head_all(self, tape: Tape, leaves: dict[str, Node],
                 result: StackResult) -> Node:
        """Readout of every step, flattened to (T*B, out)."""
        stacked = result.outputs
        t, b, f = stacked.value.shape
        flat = tape.reshape(stacked, (t * b, f))
        return tape.add(tape.linear(flat, leaves["head.W"]), leaves["head.b"])
