"""Deterministic random numbers: xoshiro256++ with splitmix64 seeding.

The generator is pure 64-bit integer arithmetic, so a seed produces the
identical stream on every platform. Floating-point values are derived from
the integer stream only at the final step (53-bit mantissa construction for
uniforms, Box-Muller for gaussians), never fed back into the state.
"""

from __future__ import annotations

import math

_MASK64 = 0xFFFFFFFFFFFFFFFF
_INV_2_53 = 1.0 / (1 << 53)


def splitmix64(state: int) -> tuple[int, int]:
    """Advance a splitmix64 state once; returns (new_state, output)."""
    state = (state + 0x9E3779B97F4A7C15) & _MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    z = z ^ (z >> 31)
    return state, z


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & _MASK64


class Rng:
    """xoshiro256++ generator; single-owner, split for parallel streams."""

    __slots__ = ("seed", "_s0", "_s1", "_s2", "_s3", "_gauss_cache")

    def __init__(self, seed: int):
        self.seed = seed & _MASK64
        sm = self.seed
        sm, self._s0 = splitmix64(sm)
        sm, self._s1 = splitmix64(sm)
        sm, self._s2 = splitmix64(sm)
        sm, self._s3 = splitmix64(sm)
        self._gauss_cache: float | None = None

    def next_u64(self) -> int:
        """Next raw 64-bit output of xoshiro256++."""
        s0, s1, s2, s3 = self._s0, self._s1, self._s2, self._s3
        result = (_rotl((s0 + s3) & _MASK64, 23) + s0) & _MASK64
        t = (s1 << 17) & _MASK64
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = _rotl(s3, 45)
        self._s0, self._s1, self._s2, self._s3 = s0, s1, s2, s3
        return result

    def next_uniform(self) -> float:
        """Uniform in [0, 1) built from the top 53 bits of the stream."""
        return (self.next_u64() >> 11) * _INV_2_53

    def next_gaussian(self) -> float:
        """Standard normal via Box-Muller; consumes exactly two uniforms per pair."""
        if self._gauss_cache is not None:
            z = self._gauss_cache
            self._gauss_cache = None
            return z
        u1 = self.next_uniform()
        u2 = self.next_uniform()
        # 1 - u1 lies in (0, 1], keeping the log argument strictly positive.
        r = math.sqrt(-2.0 * math.log(1.0 - u1))
        theta = 2.0 * math.pi * u2
        self._gauss_cache = r * math.sin(theta)
        return r * math.cos(theta)

    def next_index(self, n: int) -> int:
        """Uniform integer in [0, n) derived from one uniform draw."""
        if n <= 0:
            raise ValueError(f"next_index needs n >= 1, got {n}")
        return min(int(self.next_uniform() * n), n - 1)

    def split(self, stream: int) -> "Rng":
        """Derive an independent generator for a named stream index.

        Child seeds come from a splitmix64 walk over the root seed, so
        workers never share state with the parent or with each other.
        """
        sm = self.seed
        for _ in range(stream + 1):
            sm, out = splitmix64(sm)
        return Rng(out)


def derive_streams(root_seed: int, count: int) -> list[Rng]:
    """Independent generators 0..count-1 from one root seed."""
    root = Rng(root_seed)
    return [root.split(k) for k in range(count)]
