"""Standardized parameter initializers driven by the deterministic Rng.

Each initializer is a pure function of (spec, shape, rng draw order), so a
seed fully determines the produced bits. Matrices follow the row-major
convention used everywhere else in the library: a weight of shape (H, I)
maps I input features to H outputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ContractError
from .rng import Rng


@dataclass(frozen=True)
class Init:
    """Initializer descriptor.

    kind: one of 'uniform_fan', 'glorot_uniform', 'orthogonal',
          'identity_scaled', 'zeros', 'constant', 'unit_uniform'.
    fan:  explicit fan for uniform_fan; derived from the shape when None.
    gain: diagonal value for identity_scaled.
    value: fill value for constant.
    """

    kind: str
    fan: int | None = None
    gain: float = 1.0
    value: float = 0.0

    def describe(self) -> str:
        if self.kind == "uniform_fan":
            return f"uniform_fan({self.fan})" if self.fan else "uniform_fan"
        if self.kind == "identity_scaled":
            return f"identity_scaled({self.gain:g})"
        if self.kind == "constant":
            return f"constant({self.value:g})"
        return self.kind


def uniform_fan(fan: int | None = None) -> Init:
    return Init("uniform_fan", fan=fan)


def glorot_uniform() -> Init:
    return Init("glorot_uniform")


def orthogonal() -> Init:
    return Init("orthogonal")


def identity_scaled(gain: float) -> Init:
    return Init("identity_scaled", gain=gain)


def zeros() -> Init:
    return Init("zeros")


def constant(value: float) -> Init:
    return Init("constant", value=value)


def unit_uniform() -> Init:
    """U(0, 1) clipped to (0, 1]; used for the IndRNN recurrent vector."""
    return Init("unit_uniform")


def _fan_in(shape: tuple[int, ...]) -> int:
    # Second extent for matrices, length for vectors.
    return shape[1] if len(shape) == 2 else shape[0]


def _uniform_array(rng: Rng, shape: tuple[int, ...], bound: float) -> np.ndarray:
    # 2u - 1 over u in (0, 1) keeps every sample strictly inside (-bound, bound);
    # the measure-zero u == 0 draw is rejected to honor the open interval.
    out = np.empty(shape, dtype=np.float64)
    flat = out.reshape(-1)
    for i in range(flat.size):
        u = rng.next_uniform()
        while u == 0.0:
            u = rng.next_uniform()
        flat[i] = bound * (2.0 * u - 1.0)
    return out


def _gaussian_array(rng: Rng, shape: tuple[int, ...]) -> np.ndarray:
    out = np.empty(shape, dtype=np.float64)
    flat = out.reshape(-1)
    for i in range(flat.size):
        flat[i] = rng.next_gaussian()
    return out


def _orthogonal_array(rng: Rng, shape: tuple[int, ...]) -> np.ndarray:
    if len(shape) != 2 or shape[0] < shape[1]:
        raise ContractError(
            f"orthogonal init requires a square or tall matrix, got shape {shape}"
        )
    rows, cols = shape
    g = _gaussian_array(rng, (rows, rows))
    q, r = np.linalg.qr(g)
    # Forcing diag(R) positive makes Q the unique representative for the draw.
    sign = np.sign(np.diag(r))
    sign[sign == 0.0] = 1.0
    q = q * sign[np.newaxis, :]
    return np.ascontiguousarray(q[:, :cols])


def gaussian_scaled(scale: float) -> Init:
    """Entries N(0, 1) * scale; used for the antisymmetric recurrent matrix."""
    return Init("gaussian_scaled", gain=scale)


def initialize(spec: Init, shape: tuple[int, ...], rng: Rng) -> np.ndarray:
    """Materialize one parameter tensor; consumes rng draws in row-major order."""
    if len(shape) > 2:
        raise ContractError(f"initializers accept rank <= 2 shapes, got {shape}")
    if spec.kind == "zeros":
        return np.zeros(shape, dtype=np.float64)
    if spec.kind == "constant":
        return np.full(shape, float(spec.value), dtype=np.float64)
    if spec.kind == "uniform_fan":
        fan = spec.fan if spec.fan is not None else _fan_in(shape)
        return _uniform_array(rng, shape, 1.0 / math.sqrt(fan))
    if spec.kind == "glorot_uniform":
        if len(shape) == 2:
            fan_in, fan_out = shape[1], shape[0]
        else:
            fan_in = fan_out = shape[0]
        return _uniform_array(rng, shape, math.sqrt(6.0 / (fan_in + fan_out)))
    if spec.kind == "orthogonal":
        return _orthogonal_array(rng, shape)
    if spec.kind == "identity_scaled":
        if len(shape) != 2:
            raise ContractError(f"identity_scaled needs a matrix shape, got {shape}")
        out = np.zeros(shape, dtype=np.float64)
        np.fill_diagonal(out, float(spec.gain))
        return out
    if spec.kind == "unit_uniform":
        out = np.empty(shape, dtype=np.float64)
        flat = out.reshape(-1)
        for i in range(flat.size):
            # 1 - u maps [0, 1) onto (0, 1], the clipped target interval.
            flat[i] = 1.0 - rng.next_uniform()
        return out
    if spec.kind == "gaussian_scaled":
        return _gaussian_array(rng, shape) * float(spec.gain)
    raise ContractError(f"unknown initializer kind {spec.kind!r}")
