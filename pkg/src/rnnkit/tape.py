"""Dense tensors and a reverse-mode differentiation tape over a fixed op set.

Tensors are C-contiguous numpy arrays of rank <= 3 (scalars are shape-(1,)
vectors; sequences are time-major T x B x F blocks) in f64 (default) or f32.
Every operation validates shapes up front and checks its result for
NaN/Inf, so numerical blowups surface at the op that produced them.

A Tape is an append-only list of Nodes in topological order; backward walks
it in strictly decreasing id order once per call, accumulating gradients
additively (running backward twice without reset exactly doubles them).
"""

from __future__ import annotations

import math
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ContractError, DimensionError, DomainError, NonFiniteError

_EW_OPS = ("add", "sub", "mul")
_UNARY_OPS = ("sigmoid", "tanh", "relu", "neg", "square", "log")


def as_tensor(data, dtype=np.float64) -> np.ndarray:
    """Coerce to a contiguous rank <= 3 array of the tape dtype."""
    arr = np.ascontiguousarray(np.asarray(data, dtype=dtype))
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.ndim > 3:
        raise DimensionError(f"tensors are rank <= 3, got shape {arr.shape}")
    return arr


def _ensure_finite(arr: np.ndarray, op: str) -> None:
    # Fast screen: one reduction. A finite array can only fail the screen by
    # overflowing the sum, so the precise check settles any screen failure.
    if arr.size and not math.isfinite(float(arr.sum())):
        if not np.isfinite(arr).all():
            raise NonFiniteError(f"{op} produced non-finite values")


class Node:
    """One tape entry: an operation, its inputs, its value, its gradient."""

    __slots__ = ("id", "op", "inputs", "value", "grad", "needs_grad", "aux")

    def __init__(self, id: int, op: str, inputs: tuple, value: np.ndarray,
                 needs_grad: bool, aux=None):
        self.id = id
        self.op = op
        self.inputs = inputs
        self.value = value
        self.grad: np.ndarray | None = None
        self.needs_grad = needs_grad
        self.aux = aux

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def __repr__(self):
        return f"Node({self.id}, {self.op}, shape={self.value.shape})"


class Tape:
    """Single-writer computation record; values are immutable once appended."""

    def __init__(self, dtype=np.float64):
        if dtype not in (np.float64, np.float32):
            raise ContractError(f"dtype must be f64 or f32, got {dtype}")
        self.dtype = dtype
        self.nodes: list[Node] = []
        self._concat_memo: dict[tuple, Node] = {}
        self._ones_memo: dict[tuple[int, ...], Node] = {}
        self._scalar_memo: dict[float, Node] = {}

    # ------------------------------------------------------------------ build

    def _append(self, op: str, inputs: tuple, value: np.ndarray, aux=None,
                check: bool = True) -> Node:
        # check=False marks ops that cannot produce non-finite values from
        # finite inputs (slices, concatenations, bounded activations).
        if check:
            _ensure_finite(value, op)
        needs = any(n.needs_grad for n in inputs)
        node = Node(len(self.nodes), op, inputs, value, needs, aux)
        self.nodes.append(node)
        return node

    def leaf(self, data, param: bool = False) -> Node:
        """Enter a tensor on the tape; param leaves receive gradients."""
        value = as_tensor(data, self.dtype)
        _ensure_finite(value, "leaf")
        node = Node(len(self.nodes), "leaf", (), value, param)
        self.nodes.append(node)
        return node

    def ones_like(self, a: Node) -> Node:
        """Constant leaf of ones matching a's shape; cached per shape."""
        memo = self._ones_memo.get(a.value.shape)
        if memo is None:
            memo = self.leaf(np.ones_like(a.value))
            self._ones_memo[a.value.shape] = memo
        return memo

    def const_scalar(self, v: float) -> Node:
        """Constant shape-(1,) leaf; cached per value."""
        memo = self._scalar_memo.get(v)
        if memo is None:
            memo = self.leaf(np.array([v], dtype=self.dtype))
            self._scalar_memo[v] = memo
        return memo

    # -------------------------------------------------------------------- ops

    def matmul(self, a: Node, b: Node) -> Node:
        if a.value.ndim != 2 or b.value.ndim != 2 or a.value.shape[1] != b.value.shape[0]:
            raise DimensionError(
                f"matmul needs (m,k)@(k,n), got {a.value.shape} and {b.value.shape}")
        return self._append("matmul", (a, b), a.value @ b.value)

    def linear(self, x: Node, w: Node) -> Node:
        """x @ w.T for row-major weights of shape (out, in)."""
        if x.value.ndim != 2 or w.value.ndim != 2 or x.value.shape[1] != w.value.shape[1]:
            raise DimensionError(
                f"linear needs (m,k) and (n,k), got {x.value.shape} and {w.value.shape}")
        return self._append("linear", (x, w), x.value @ w.value.T)

    def _broadcast_check(self, op: str, a: Node, b: Node) -> None:
        ash, bsh = a.value.shape, b.value.shape
        if ash == bsh:
            return
        if bsh == (1,):
            return
        if len(bsh) == 1 and len(ash) >= 2 and ash[-1] == bsh[0]:
            return
        raise DimensionError(f"{op}: incompatible shapes {ash} and {bsh}")

    def ew(self, op: str, a: Node, b: Node) -> Node:
        """Elementwise add/sub/mul; b may be a scalar or a bias vector
        broadcast across the rows of a."""
        if op not in _EW_OPS:
            raise ContractError(f"unknown elementwise op {op!r}")
        self._broadcast_check(op, a, b)
        if op == "add":
            value = a.value + b.value
        elif op == "sub":
            value = a.value - b.value
        else:
            value = a.value * b.value
        return self._append("ew_" + op, (a, b), value)

    def add(self, a: Node, b: Node) -> Node:
        return self.ew("add", a, b)

    def sub(self, a: Node, b: Node) -> Node:
        return self.ew("sub", a, b)

    def mul(self, a: Node, b: Node) -> Node:
        return self.ew("mul", a, b)

    def one_minus(self, a: Node) -> Node:
        return self.ew("sub", self.ones_like(a), a)

    def unary(self, op: str, a: Node) -> Node:
        if op not in _UNARY_OPS:
            raise ContractError(f"unknown unary op {op!r}")
        x = a.value
        if op == "sigmoid":
            # tanh form is overflow-free for any finite input
            value = 0.5 * (np.tanh(0.5 * x) + 1.0)
        elif op == "tanh":
            value = np.tanh(x)
        elif op == "relu":
            value = np.maximum(x, 0.0)
        elif op == "neg":
            value = -x
        elif op == "square":
            value = x * x
        else:
            if x.size and x.min() <= 0.0:
                raise DomainError("log requires strictly positive inputs")
            value = np.log(x)
        bounded = op in ("sigmoid", "tanh", "relu", "neg", "log")
        return self._append("u_" + op, (a,), value, check=not bounded)

    def sigmoid(self, a: Node) -> Node:
        return self.unary("sigmoid", a)

    def tanh(self, a: Node) -> Node:
        return self.unary("tanh", a)

    def relu(self, a: Node) -> Node:
        return self.unary("relu", a)

    def neg(self, a: Node) -> Node:
        return self.unary("neg", a)

    def square(self, a: Node) -> Node:
        return self.unary("square", a)

    def log(self, a: Node) -> Node:
        return self.unary("log", a)

    def scalar_gate(self, raw: Node) -> Node:
        """Sigmoid of a single-element tensor, so trainable scalars gate states."""
        if raw.value.shape != (1,):
            raise ContractError(f"scalar_gate needs shape (1,), got {raw.value.shape}")
        return self.unary("sigmoid", raw)

    def reduce(self, op: str, a: Node) -> Node:
        if op not in ("sum", "mean"):
            raise ContractError(f"unknown reduce op {op!r}")
        if op == "mean" and a.value.size == 0:
            raise DomainError("mean of an empty tensor")
        value = np.array([a.value.sum()], dtype=self.dtype)
        if op == "mean":
            value = value / a.value.size
        return self._append("reduce_" + op, (a,), value)

    def reduce_sum(self, a: Node) -> Node:
        return self.reduce("sum", a)

    def reduce_mean(self, a: Node) -> Node:
        return self.reduce("mean", a)

    def concat_rows(self, parts: Sequence[Node]) -> Node:
        """Concatenate along the first axis; memoized so fused projection
        matrices are materialized once per tape."""
        parts = tuple(parts)
        if not parts:
            raise ContractError("concat_rows of zero tensors")
        key = ("rows",) + tuple(p.id for p in parts)
        memo = self._concat_memo.get(key)
        if memo is not None:
            return memo
        first = parts[0].value
        for p in parts[1:]:
            if p.value.ndim != first.ndim or p.value.shape[1:] != first.shape[1:]:
                raise DimensionError(
                    f"concat_rows: trailing dims differ: {first.shape} vs {p.value.shape}")
        node = self._append("concat_rows", parts,
                            np.concatenate([p.value for p in parts], axis=0),
                            check=False)
        self._concat_memo[key] = node
        return node

    def concat_cols(self, parts: Sequence[Node]) -> Node:
        """Concatenate along the last axis (feature axis)."""
        parts = tuple(parts)
        if not parts:
            raise ContractError("concat_cols of zero tensors")
        first = parts[0].value
        for p in parts[1:]:
            if p.value.ndim != first.ndim or p.value.shape[:-1] != first.shape[:-1]:
                raise DimensionError(
                    f"concat_cols: leading dims differ: {first.shape} vs {p.value.shape}")
        value = np.ascontiguousarray(np.concatenate([p.value for p in parts], axis=-1))
        return self._append("concat_cols", parts, value, check=False)

    def slice_cols(self, a: Node, lo: int, hi: int) -> Node:
        """Slice [lo, hi) along the last axis."""
        extent = a.value.shape[-1]
        if not (0 <= lo < hi <= extent):
            raise DimensionError(
                f"slice_cols range [{lo},{hi}) out of extent {extent} for shape {a.value.shape}")
        value = np.ascontiguousarray(a.value[..., lo:hi])
        return self._append("slice_cols", (a,), value, aux=(lo, hi), check=False)

    def stack_rows(self, steps: Sequence[Node]) -> Node:
        """Stack equal-shape tensors along a new leading axis (time-major)."""
        steps = tuple(steps)
        if not steps:
            raise ContractError("stack_rows of zero tensors")
        first = steps[0].value
        if first.ndim > 2:
            raise DimensionError("stack_rows inputs must be rank <= 2")
        for s in steps[1:]:
            if s.value.shape != first.shape:
                raise DimensionError(
                    f"stack_rows: shapes differ: {first.shape} vs {s.value.shape}")
        return self._append("stack_rows", steps,
                            np.stack([s.value for s in steps], axis=0),
                            check=False)

    def slice_time(self, a: Node, t: int) -> Node:
        """Select index t of the leading axis, dropping it."""
        if a.value.ndim < 2:
            raise DimensionError(f"slice_time needs rank >= 2, got shape {a.value.shape}")
        if not (0 <= t < a.value.shape[0]):
            raise DimensionError(f"slice_time index {t} out of extent {a.value.shape[0]}")
        return self._append("slice_time", (a,), np.ascontiguousarray(a.value[t]),
                            aux=t, check=False)

    def reverse_time(self, a: Node, lengths: np.ndarray | None = None) -> Node:
        """Reverse the leading axis; with lengths, each batch row reverses
        only its valid prefix (an involution, so backward reuses it)."""
        if a.value.ndim != 3:
            raise DimensionError(f"reverse_time needs a T x B x F block, got {a.value.shape}")
        value = _reverse_block(a.value, lengths)
        return self._append("reverse_time", (a,), value, aux=lengths, check=False)

    def reshape(self, a: Node, shape: tuple[int, ...]) -> Node:
        if int(np.prod(shape)) != a.value.size or len(shape) > 3:
            raise DimensionError(f"cannot reshape {a.value.shape} to {shape}")
        return self._append("reshape", (a,), a.value.reshape(shape).copy(),
                            check=False)

    def cross_entropy(self, logits: Node, targets: np.ndarray) -> Node:
        """Mean negative log-softmax at integer target indices.

        Log-sum-exp uses max subtraction; backward is (softmax - onehot)/N.
        """
        if logits.value.ndim != 2:
            raise DimensionError(f"cross_entropy needs (N,C) logits, got {logits.value.shape}")
        targets = np.asarray(targets)
        n, c = logits.value.shape
        if targets.shape != (n,):
            raise DimensionError(
                f"cross_entropy targets shape {targets.shape} != ({n},)")
        if targets.size and (targets.min() < 0 or targets.max() >= c):
            raise ContractError(f"cross_entropy target index out of [0,{c})")
        x = logits.value
        m = x.max(axis=1, keepdims=True)
        lse = m[:, 0] + np.log(np.exp(x - m).sum(axis=1))
        picked = x[np.arange(n), targets]
        value = np.array([(lse - picked).mean()], dtype=self.dtype)
        return self._append("cross_entropy", (logits,), value, aux=targets)

    # --------------------------------------------------------------- backward

    def backward(self, root: Node) -> None:
        """Accumulate d(root)/d(node) into .grad for every reachable node.

        The pass keeps its own buffers and merges them at the end, so calling
        backward again without reset adds the same gradients once more.
        """
        if root.value.shape != (1,):
            raise ContractError(f"backward root must be scalar (1,), got {root.value.shape}")
        local: dict[int, np.ndarray] = {root.id: np.ones(1, dtype=self.dtype)}

        def accum(node: Node, g: np.ndarray, fresh: bool) -> None:
            if not node.needs_grad:
                return
            cur = local.get(node.id)
            if cur is None:
                local[node.id] = g if fresh else g.copy()
            else:
                cur += g

        for i in range(root.id, -1, -1):
            g = local.pop(i, None)
            if g is None:
                continue
            node = self.nodes[i]
            # Pass-local buffers are uniquely owned, so the merge can adopt g.
            if node.grad is None:
                node.grad = g
            else:
                node.grad += g
            if node.inputs and node.needs_grad:
                _BACKWARD[node.op](node, g, accum)

    def grad(self, node: Node) -> np.ndarray:
        """Accumulated gradient; zeros for leaves the graph never touched."""
        if node.grad is None:
            return np.zeros_like(node.value)
        return node.grad


def _reverse_block(value: np.ndarray, lengths: np.ndarray | None) -> np.ndarray:
    if lengths is None:
        return np.ascontiguousarray(value[::-1])
    out = value.copy()
    for b, n in enumerate(lengths):
        out[: int(n), b] = value[: int(n), b][::-1]
    return out


# ------------------------------------------------------------- backward rules

def _bw_matmul(node, g, accum):
    a, b = node.inputs
    accum(a, g @ b.value.T, True)
    accum(b, a.value.T @ g, True)


def _bw_linear(node, g, accum):
    x, w = node.inputs
    accum(x, g @ w.value, True)
    accum(w, g.T @ x.value, True)


def _reduce_to(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum g down to a broadcast operand's shape."""
    if g.shape == shape:
        return g
    if shape == (1,):
        return g.sum().reshape(1)
    return g.sum(axis=tuple(range(g.ndim - 1)))


def _bw_ew_add(node, g, accum):
    a, b = node.inputs
    accum(a, g, False)
    accum(b, _reduce_to(g, b.value.shape), b.value.shape != g.shape)


def _bw_ew_sub(node, g, accum):
    a, b = node.inputs
    accum(a, g, False)
    accum(b, -_reduce_to(g, b.value.shape), True)


def _bw_ew_mul(node, g, accum):
    a, b = node.inputs
    accum(a, g * b.value, True)
    accum(b, _reduce_to(g * a.value, b.value.shape), True)


def _bw_sigmoid(node, g, accum):
    s = node.value
    accum(node.inputs[0], g * (s * (1.0 - s)), True)


def _bw_tanh(node, g, accum):
    t = node.value
    accum(node.inputs[0], g * (1.0 - t * t), True)


def _bw_relu(node, g, accum):
    # Subgradient at exactly 0 is defined as 0.
    accum(node.inputs[0], g * (node.inputs[0].value > 0.0), True)


def _bw_neg(node, g, accum):
    accum(node.inputs[0], -g, True)


def _bw_square(node, g, accum):
    accum(node.inputs[0], g * (2.0 * node.inputs[0].value), True)


def _bw_log(node, g, accum):
    accum(node.inputs[0], g / node.inputs[0].value, True)


def _bw_reduce_sum(node, g, accum):
    a = node.inputs[0]
    accum(a, np.full_like(a.value, g[0]), True)


def _bw_reduce_mean(node, g, accum):
    a = node.inputs[0]
    accum(a, np.full_like(a.value, g[0] / a.value.size), True)


def _bw_concat_rows(node, g, accum):
    offset = 0
    for p in node.inputs:
        n = p.value.shape[0]
        accum(p, g[offset:offset + n], False)
        offset += n


def _bw_concat_cols(node, g, accum):
    offset = 0
    for p in node.inputs:
        n = p.value.shape[-1]
        accum(p, np.ascontiguousarray(g[..., offset:offset + n]), True)
        offset += n


def _bw_slice_cols(node, g, accum):
    a = node.inputs[0]
    lo, hi = node.aux
    full = np.zeros(a.value.shape, dtype=a.value.dtype)
    full[..., lo:hi] = g
    accum(a, full, True)


def _bw_stack_rows(node, g, accum):
    for t, s in enumerate(node.inputs):
        accum(s, g[t], False)


def _bw_slice_time(node, g, accum):
    a = node.inputs[0]
    full = np.zeros(a.value.shape, dtype=a.value.dtype)
    full[node.aux] = g
    accum(a, full, True)


def _bw_reverse_time(node, g, accum):
    accum(node.inputs[0], _reverse_block(g, node.aux), True)


def _bw_reshape(node, g, accum):
    a = node.inputs[0]
    accum(a, g.reshape(a.value.shape), True)


def _bw_cross_entropy(node, g, accum):
    logits = node.inputs[0]
    targets = node.aux
    x = logits.value
    n = x.shape[0]
    m = x.max(axis=1, keepdims=True)
    e = np.exp(x - m)
    p = e / e.sum(axis=1, keepdims=True)
    p[np.arange(n), targets] -= 1.0
    accum(logits, (g[0] / n) * p, True)


_BACKWARD: dict[str, Callable] = {
    "matmul": _bw_matmul,
    "linear": _bw_linear,
    "ew_add": _bw_ew_add,
    "ew_sub": _bw_ew_sub,
    "ew_mul": _bw_ew_mul,
    "u_sigmoid": _bw_sigmoid,
    "u_tanh": _bw_tanh,
    "u_relu": _bw_relu,
    "u_neg": _bw_neg,
    "u_square": _bw_square,
    "u_log": _bw_log,
    "reduce_sum": _bw_reduce_sum,
    "reduce_mean": _bw_reduce_mean,
    "concat_rows": _bw_concat_rows,
    "concat_cols": _bw_concat_cols,
    "slice_cols": _bw_slice_cols,
    "stack_rows": _bw_stack_rows,
    "slice_time": _bw_slice_time,
    "reverse_time": _bw_reverse_time,
    "reshape": _bw_reshape,
    "cross_entropy": _bw_cross_entropy,
}


# ------------------------------------------------------------------ gradcheck

def grad_check(build: Callable[[Tape, dict[str, Node]], Node],
               params: dict[str, np.ndarray],
               eps: float = 1e-6) -> float:
    """Max relative error between tape gradients and central differences.

    build(tape, leaves) must return a scalar node. The finite-difference side
    only ever reads forward values, keeping the oracle independent of the
    backward pass it is checking. f64 only; relative error uses the
    max(|a|, |b|, 1e-8) denominator.
    """
    params = {k: np.asarray(v, dtype=np.float64) for k, v in params.items()}
    tape = Tape(np.float64)
    leaves = {k: tape.leaf(v, param=True) for k, v in params.items()}
    root = build(tape, leaves)
    if root.value.shape != (1,):
        raise ContractError("grad_check target must be scalar-valued")
    tape.backward(root)
    autodiff = {k: tape.grad(leaves[k]).reshape(-1) for k in params}

    def forward() -> float:
        t = Tape(np.float64)
        lv = {k: t.leaf(v) for k, v in params.items()}
        return float(build(t, lv).value[0])

    worst = 0.0
    for name, arr in params.items():
        flat = arr.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            f_plus = forward()
            flat[i] = orig - eps
            f_minus = forward()
            flat[i] = orig
            fd = (f_plus - f_minus) / (2.0 * eps)
            ad = autodiff[name][i]
            rel = abs(ad - fd) / max(abs(ad), abs(fd), 1e-8)
            worst = max(worst, rel)
    return worst
