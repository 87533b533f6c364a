"""Minimal reverse-mode automatic differentiation over dense float64 tensors.

A Tape records primitive operations append-only; each node stores its op
name, parent indices and the cached forward value, so a tape can be replayed
bit-exactly.  backward() seeds a scalar root and runs a single reverse sweep,
accumulating adjoints into parameter leaves.  Constants never receive
gradient; stop_gradient passes its value through unchanged and contributes
exactly zero adjoint upstream.

The op set is intentionally small: what a dense classifier forward pass, a
log-softmax likelihood and sign-flipped probe sums need, nothing more.
Matrix products go through np.einsum with optimize=False: unlike BLAS gemm,
its accumulation order for row i does not depend on the number of rows, so a
batched forward is bit-identical to stacked per-sample forwards.

Everything is float64; bounds downstream are verified to 1e-10, which single
precision cannot reach.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass

import numpy as np

__all__ = [
    "Tape",
    "Value",
    "constant",
    "parameter",
    "add",
    "mul",
    "matmul",
    "scale",
    "tanh",
    "relu",
    "exp",
    "sqrt",
    "clip",
    "log_softmax",
    "gather",
    "wsum",
    "total",
    "stop_gradient",
    "backward",
    "gradient",
    "grad_check",
]


@dataclass
class _Node:
    op: str
    parents: tuple[int, ...]
    value: np.ndarray
    ctx: tuple = ()


class Tape:
    """Append-only record of primitive operations, replayable bit-exactly.

    Single-writer while recording; once the forward pass is done the node
    list is only read, so backward() may run from any thread (each sweep
    keeps its own adjoint buffers; only the pass counter needs the lock).
    """

    def __init__(self):
        self.nodes: list[_Node] = []
        self.backward_calls = 0
        self._counter_lock = threading.Lock()

    def _push(self, op: str, parents: tuple[int, ...], value: np.ndarray, ctx: tuple = ()) -> "Value":
        value = np.asarray(value, dtype=np.float64)
        self.nodes.append(_Node(op, parents, value, ctx))
        return Value(self, len(self.nodes) - 1)

    def param_ids(self) -> list[int]:
        return [i for i, n in enumerate(self.nodes) if n.op == "param"]

    def replay(self) -> bool:
        """Re-run every recorded op; True iff all values reproduce bit-exactly."""
        for i, node in enumerate(self.nodes):
            if node.op in ("const", "param"):
                continue
            args = [self.nodes[j].value for j in node.parents]
            again = _FORWARD[node.op](node, *args)
            if not np.array_equal(again, node.value):
                return False
        return True


class Value:
    """Handle to one tape node; .data is the cached forward value."""

    __slots__ = ("tape", "idx")

    def __init__(self, tape: Tape, idx: int):
        self.tape = tape
        self.idx = idx

    @property
    def data(self) -> np.ndarray:
        return self.tape.nodes[self.idx].value

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __add__(self, other: "Value") -> "Value":
        return add(self, other)

    def __mul__(self, other: "Value") -> "Value":
        return mul(self, other)

    def __matmul__(self, other: "Value") -> "Value":
        return matmul(self, other)

    def __repr__(self):
        return f"Value(op={self.tape.nodes[self.idx].op!r}, shape={self.shape})"


def constant(tape: Tape, array) -> Value:
    return tape._push("const", (), np.asarray(array, dtype=np.float64))


def parameter(tape: Tape, array) -> Value:
    return tape._push("param", (), np.asarray(array, dtype=np.float64))


def _same_tape(*values: Value) -> Tape:
    tape = values[0].tape
    if any(v.tape is not tape for v in values):
        raise ValueError("operands live on different tapes")
    return tape


# Forward rules, keyed by op name.  Each takes (node, *parent_values) so
# replay() can re-execute from the record alone.

def _fwd_add(node, a, b):
    if a.shape == b.shape:
        return a + b
    if a.ndim == 2 and b.ndim == 1 and a.shape[1] == b.shape[0]:
        return a + b  # bias add over rows
    raise ValueError(f"add: incompatible shapes {a.shape} and {b.shape}")


def _fwd_mul(node, a, b):
    if a.shape != b.shape:
        raise ValueError(f"mul: shape mismatch {a.shape} vs {b.shape}")
    return a * b


def _fwd_matmul(node, a, b):
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    return np.einsum("ij,jk->ik", a, b, optimize=False)


def _fwd_scale(node, a):
    return node.ctx[0] * a


def _fwd_tanh(node, a):
    return np.tanh(a)


def _fwd_relu(node, a):
    return np.maximum(a, 0.0)


def _fwd_exp(node, a):
    return np.exp(a)


def _fwd_sqrt(node, a):
    return np.sqrt(a)


def _fwd_clip(node, a):
    lo, hi = node.ctx
    return np.clip(a, lo, hi)


def _fwd_log_softmax(node, a):
    m = np.max(a, axis=-1, keepdims=True)
    shifted = a - m
    return shifted - np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True))


def _fwd_gather(node, a):
    idx = node.ctx[0]
    if a.ndim == 2:
        return a[np.arange(a.shape[0]), idx]
    return a[idx]


def _fwd_wsum(node, a):
    w = node.ctx[0]
    return np.asarray(np.sum(a * w))


def _fwd_total(node, a):
    return np.asarray(np.sum(a))


def _fwd_stop(node, a):
    return a.copy()


_FORWARD = {
    "add": _fwd_add,
    "mul": _fwd_mul,
    "matmul": _fwd_matmul,
    "scale": _fwd_scale,
    "tanh": _fwd_tanh,
    "relu": _fwd_relu,
    "exp": _fwd_exp,
    "sqrt": _fwd_sqrt,
    "clip": _fwd_clip,
    "log_softmax": _fwd_log_softmax,
    "gather": _fwd_gather,
    "wsum": _fwd_wsum,
    "total": _fwd_total,
    "stop": _fwd_stop,
}


def add(a: Value, b: Value) -> Value:
    tape = _same_tape(a, b)
    node = _Node("add", (a.idx, b.idx), None)
    return tape._push("add", (a.idx, b.idx), _fwd_add(node, a.data, b.data))


def mul(a: Value, b: Value) -> Value:
    tape = _same_tape(a, b)
    node = _Node("mul", (a.idx, b.idx), None)
    return tape._push("mul", (a.idx, b.idx), _fwd_mul(node, a.data, b.data))


def matmul(a: Value, b: Value) -> Value:
    tape = _same_tape(a, b)
    node = _Node("matmul", (a.idx, b.idx), None)
    return tape._push("matmul", (a.idx, b.idx), _fwd_matmul(node, a.data, b.data))


def scale(a: Value, c: float) -> Value:
    ctx = (float(c),)
    node = _Node("scale", (a.idx,), None, ctx)
    return a.tape._push("scale", (a.idx,), _fwd_scale(node, a.data), ctx)


def tanh(a: Value) -> Value:
    return a.tape._push("tanh", (a.idx,), np.tanh(a.data))


def relu(a: Value) -> Value:
    return a.tape._push("relu", (a.idx,), np.maximum(a.data, 0.0))


def exp(a: Value) -> Value:
    return a.tape._push("exp", (a.idx,), np.exp(a.data))


def sqrt(a: Value) -> Value:
    if np.any(a.data < 0):
        raise ValueError("sqrt of negative operand")
    return a.tape._push("sqrt", (a.idx,), np.sqrt(a.data))


def clip(a: Value, lo: float, hi: float) -> Value:
    ctx = (float(lo), float(hi))
    node = _Node("clip", (a.idx,), None, ctx)
    return a.tape._push("clip", (a.idx,), _fwd_clip(node, a.data), ctx)


def log_softmax(a: Value) -> Value:
    """Row-wise log-softmax along the last axis, stabilized by max-subtraction."""
    node = _Node("log_softmax", (a.idx,), None)
    return a.tape._push("log_softmax", (a.idx,), _fwd_log_softmax(node, a.data))


def gather(a: Value, indices) -> Value:
    """Pick a[i, indices[i]] from a 2-D value, or a[index] from a 1-D value."""
    if a.data.ndim == 2:
        idx = np.asarray(indices, dtype=np.intp)
        if idx.ndim != 1 or idx.size != a.data.shape[0]:
            raise ValueError("gather on a matrix needs one index per row")
        if np.any(idx < 0) or np.any(idx >= a.data.shape[1]):
            raise ValueError("gather index out of range")
    elif a.data.ndim == 1:
        idx = int(indices)
        if not 0 <= idx < a.data.size:
            raise ValueError("gather index out of range")
    else:
        raise ValueError("gather expects a 1-D or 2-D operand")
    ctx = (idx,)
    node = _Node("gather", (a.idx,), None, ctx)
    return a.tape._push("gather", (a.idx,), _fwd_gather(node, a.data), ctx)


def wsum(a: Value, weights) -> Value:
    """Scalar sum(a * weights) with constant weights."""
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != a.data.shape:
        raise ValueError(f"wsum: weight shape {w.shape} != operand shape {a.data.shape}")
    ctx = (w,)
    node = _Node("wsum", (a.idx,), None, ctx)
    return a.tape._push("wsum", (a.idx,), _fwd_wsum(node, a.data), ctx)


def total(a: Value) -> Value:
    return a.tape._push("total", (a.idx,), np.asarray(np.sum(a.data)))


def stop_gradient(a: Value) -> Value:
    """Identity in the forward pass; the adjoint through this edge is zero."""
    return a.tape._push("stop", (a.idx,), a.data.copy())


def _accumulate(adj: dict, idx: int, delta: np.ndarray):
    if idx in adj:
        adj[idx] = adj[idx] + delta
    else:
        adj[idx] = np.array(delta, dtype=np.float64)


def backward(root: Value) -> dict[int, np.ndarray]:
    """Reverse sweep from a scalar root; returns {param node id: adjoint}."""
    if root.data.shape != ():
        raise ValueError(f"backward root must be a scalar, got shape {root.data.shape}")
    tape = root.tape
    with tape._counter_lock:
        tape.backward_calls += 1
    adj: dict[int, np.ndarray] = {root.idx: np.ones(())}
    grads: dict[int, np.ndarray] = {}
    for i in range(root.idx, -1, -1):
        g = adj.pop(i, None)
        if g is None:
            continue
        node = tape.nodes[i]
        op = node.op
        if op == "param":
            grads[i] = g
            continue
        if op in ("const", "stop"):
            continue
        if op == "add":
            a, b = node.parents
            av, bv = tape.nodes[a].value, tape.nodes[b].value
            _accumulate(adj, a, g)
            if av.shape == bv.shape:
                _accumulate(adj, b, g)
            else:  # bias add: reduce over rows
                _accumulate(adj, b, g.sum(axis=0))
        elif op == "mul":
            a, b = node.parents
            _accumulate(adj, a, g * tape.nodes[b].value)
            _accumulate(adj, b, g * tape.nodes[a].value)
        elif op == "matmul":
            a, b = node.parents
            av, bv = tape.nodes[a].value, tape.nodes[b].value
            _accumulate(adj, a, np.einsum("ik,jk->ij", g, bv, optimize=False))
            _accumulate(adj, b, np.einsum("ij,ik->jk", av, g, optimize=False))
        elif op == "scale":
            _accumulate(adj, node.parents[0], node.ctx[0] * g)
        elif op == "tanh":
            _accumulate(adj, node.parents[0], g * (1.0 - node.value**2))
        elif op == "relu":
            a = node.parents[0]
            _accumulate(adj, a, g * (tape.nodes[a].value > 0))
        elif op == "exp":
            _accumulate(adj, node.parents[0], g * node.value)
        elif op == "sqrt":
            _accumulate(adj, node.parents[0], g * 0.5 / node.value)
        elif op == "clip":
            a = node.parents[0]
            lo, hi = node.ctx
            av = tape.nodes[a].value
            _accumulate(adj, a, g * ((av > lo) & (av < hi)))
        elif op == "log_softmax":
            a = node.parents[0]
            soft = np.exp(node.value)
            _accumulate(adj, a, g - soft * np.sum(g, axis=-1, keepdims=True))
        elif op == "gather":
            a = node.parents[0]
            out = np.zeros_like(tape.nodes[a].value)
            idx = node.ctx[0]
            if out.ndim == 2:
                out[np.arange(out.shape[0]), idx] = g
            else:
                out[idx] = g
            _accumulate(adj, a, out)
        elif op == "wsum":
            _accumulate(adj, node.parents[0], g * node.ctx[0])
        elif op == "total":
            a = node.parents[0]
            _accumulate(adj, a, np.full_like(tape.nodes[a].value, g))
        else:
            raise AssertionError(f"no adjoint rule for op {op!r}")
    return grads


def gradient(root: Value) -> np.ndarray:
    """Flat gradient of a scalar over all parameter leaves, in creation order.

    Parameters the root does not depend on contribute exact zeros.
    """
    grads = backward(root)
    tape = root.tape
    parts = []
    for i in tape.param_ids():
        g = grads.get(i)
        if g is None:
            g = np.zeros_like(tape.nodes[i].value)
        parts.append(np.asarray(g, dtype=np.float64).ravel())
    if not parts:
        return np.zeros(0)
    return np.concatenate(parts)


def grad_check(f, theta, step: float = 1e-4) -> float:
    """Worst relative error between reverse-mode and central differences.

    `f` maps a flat parameter vector to a traced scalar Value and must consume
    the vector through parameter leaves in order.  Central differences at
    `step` and `step/2` are Richardson-combined to fourth order; the larger
    default step then keeps cancellation roundoff near 1e-12 absolute while
    truncation stays negligible, so small-gradient coordinates survive the
    1e-6 relative target.  The relative error uses denominator
    max(|g_i|, 1e-8) coordinate-wise.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    theta = np.asarray(theta, dtype=np.float64)
    g = gradient(f(theta))
    if g.size != theta.size:
        raise ValueError("f must consume theta entirely through parameters")

    def central(i, h):
        up = theta.copy()
        up[i] += h
        down = theta.copy()
        down[i] -= h
        return (float(f(up).data) - float(f(down).data)) / (2.0 * h)

    worst = 0.0
    for i in range(theta.size):
        fd = (4.0 * central(i, step / 2.0) - central(i, step)) / 3.0
        err = abs(g[i] - fd) / max(abs(g[i]), 1e-8)
        worst = max(worst, err)
    return worst
