"""Dense float32 tensors with taped reverse-mode automatic differentiation.

Storage and compute are 32-bit throughout; only the finite-difference
oracle in :func:`grad_check` accumulates in 64-bit. Layout is row-major
flat with no views or strides; every op returns a fresh tensor. Ops
record onto the innermost active :class:`GradGraph` (a thread-local
stack), so code running outside a ``with GradGraph():`` block is pure
forward evaluation.
"""

from __future__ import annotations

import itertools
import math
import threading
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import (
    BroadcastError,
    ContractError,
    DimensionError,
    NumericError,
    StateError,
)

REAL = np.float32

_node_ids = itertools.count()


class Tensor:
    """Shape-tagged float32 array participating in a gradient graph.

    ``data`` is always C-contiguous float32; ``grad`` (once populated by a
    backward pass) matches ``data``'s shape. ``node_id`` identifies the
    tensor inside whichever graph recorded it.
    """

    __slots__ = ("data", "requires_grad", "grad", "node_id")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.ascontiguousarray(np.asarray(data, dtype=REAL))
        self.data: np.ndarray = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.node_id = next(_node_ids)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.size != 1:
            raise ContractError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def copy(self, requires_grad: bool | None = None) -> "Tensor":
        rg = self.requires_grad if requires_grad is None else requires_grad
        return Tensor(self.data.copy(), requires_grad=rg)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __mul__(self, other) -> "Tensor":
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    def __rmul__(self, other) -> "Tensor":
        return self.__mul__(other)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def zeros(shape, requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros(shape, dtype=REAL), requires_grad=requires_grad)


def ones(shape, requires_grad: bool = False) -> Tensor:
    return Tensor(np.ones(shape, dtype=REAL), requires_grad=requires_grad)


def full(shape, value: float, requires_grad: bool = False) -> Tensor:
    return Tensor(np.full(shape, value, dtype=REAL), requires_grad=requires_grad)


def randn(shape, rng: np.random.Generator, std: float = 1.0,
          requires_grad: bool = False) -> Tensor:
    return Tensor(rng.normal(0.0, std, size=shape), requires_grad=requires_grad)


# --- gradient graph -------------------------------------------------------

class _Node:
    """One tape entry: op kind, inputs, output, and the saved-value closure
    that maps the output gradient to per-input gradients."""

    __slots__ = ("op", "inputs", "output", "bwd")

    def __init__(self, op: str, inputs: tuple[Tensor, ...], output: Tensor, bwd):
        self.op = op
        self.inputs = inputs
        self.output = output
        self.bwd = bwd


_tls = threading.local()


def _graph_stack() -> list:
    stack = getattr(_tls, "stack", None)
    if stack is None:
        stack = []
        _tls.stack = stack
    return stack


def active_graph() -> "GradGraph | None":
    stack = _graph_stack()
    return stack[-1] if stack else None


class GradGraph:
    """Append-only tape of recorded ops.

    Entering the graph as a context manager makes it the active recording
    target for the current thread. Backward visits nodes in strict reverse
    append order and may run exactly once per tape; call :meth:`reset` to
    reuse the object.
    """

    def __init__(self):
        self.nodes: list[_Node] = []
        self.consumed = False
        self._output_ids: set[int] = set()

    def __enter__(self) -> "GradGraph":
        _graph_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> bool:
        top = _graph_stack().pop()
        assert top is self, "graph context exited out of order"
        return False

    def record(self, op: str, inputs: tuple[Tensor, ...], output: Tensor, bwd) -> None:
        self.nodes.append(_Node(op, inputs, output, bwd))
        self._output_ids.add(output.node_id)

    def reset(self) -> None:
        self.nodes.clear()
        self._output_ids.clear()
        self.consumed = False

    def backward(self, loss: Tensor) -> None:
        """Populate ``grad`` on every requires_grad tensor reachable from
        ``loss``, accumulating additively over fan-out."""
        if loss.size != 1:
            raise ContractError(
                f"backward requires a scalar loss, got shape {loss.shape}")
        if self.consumed:
            raise StateError("graph already consumed by a backward pass")
        if loss.node_id not in self._output_ids:
            raise ContractError("loss was not produced through this graph")
        self.consumed = True

        grads: dict[int, np.ndarray] = {
            loss.node_id: np.ones(loss.shape, dtype=REAL)}
        leaves: dict[int, Tensor] = {loss.node_id: loss}
        for node in reversed(self.nodes):
            g_out = grads.pop(node.output.node_id, None)
            if g_out is None:
                continue
            leaves.pop(node.output.node_id, None)
            out = node.output
            out.grad = g_out if out.grad is None else out.grad + g_out
            for t, g_in in zip(node.inputs, node.bwd(g_out)):
                if g_in is None or not t.requires_grad:
                    continue
                g_in = np.ascontiguousarray(g_in, dtype=REAL)
                prev = grads.get(t.node_id)
                grads[t.node_id] = g_in if prev is None else prev + g_in
                leaves[t.node_id] = t
        for nid, g in grads.items():
            t = leaves[nid]
            t.grad = g if t.grad is None else t.grad + g


def backward(loss: Tensor, graph: GradGraph) -> None:
    graph.backward(loss)


class pause_recording:
    """Context manager: ops inside run pure-forward, recording nothing."""

    def __enter__(self):
        _graph_stack().append(None)
        return self

    def __exit__(self, exc_type, exc, tb) -> bool:
        _graph_stack().pop()
        return False


def _assert_finite(op: str, arr: np.ndarray, where: str) -> None:
    # Fast path: one C reduction. A non-finite sum falls back to the exact
    # elementwise check, since finite entries can still overflow the sum.
    if math.isfinite(float(arr.sum(dtype=np.float64))):
        return
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"{op} produced non-finite values {where}")


def _finish(op: str, inputs: tuple[Tensor, ...], out_data: np.ndarray, bwd) -> Tensor:
    out_data = np.ascontiguousarray(out_data, dtype=REAL)
    _assert_finite(op, out_data, "from finite inputs")
    graph = active_graph()
    track = graph is not None and any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=track)
    if track:
        graph.record(op, inputs, out, bwd)
    return out


# --- ops ------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of two rank-2 tensors; dA = g·Bᵀ, dB = Aᵀ·g."""
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(
            f"matmul needs rank-2 tensors, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(
            f"matmul inner extents differ: {a.shape} vs {b.shape}")
    a_data, b_data = a.data, b.data

    def bwd(g):
        return (g @ b_data.T if a.requires_grad else None,
                a_data.T @ g if b.requires_grad else None)

    return _finish("matmul", (a, b), a_data @ b_data, bwd)


def _check_suffix_broadcast(a: Tensor, b: Tensor) -> None:
    if a.shape == b.shape:
        return
    k = b.ndim
    if k < a.ndim and a.shape[a.ndim - k:] == b.shape:
        return
    raise BroadcastError(
        f"shape {b.shape} is not a suffix of {a.shape}")


def _reduce_to_suffix(g: np.ndarray, suffix_ndim: int) -> np.ndarray:
    lead = g.ndim - suffix_ndim
    if lead:
        g = g.sum(axis=tuple(range(lead)))
    return g


def add(a: Tensor, b: Tensor) -> Tensor:
    """Pointwise sum; b may broadcast by repetition along leading axes
    (b's shape must be a suffix of a's)."""
    _check_suffix_broadcast(a, b)

    def bwd(g):
        return (g if a.requires_grad else None,
                _reduce_to_suffix(g, b.ndim) if b.requires_grad else None)

    return _finish("add", (a, b), a.data + b.data, bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Pointwise product with the same suffix-broadcast rule as add;
    da = g⊙b, db = sum of g⊙a over broadcast axes."""
    _check_suffix_broadcast(a, b)
    a_data, b_data = a.data, b.data

    def bwd(g):
        return (g * b_data if a.requires_grad else None,
                _reduce_to_suffix(g * a_data, b.ndim) if b.requires_grad else None)

    return _finish("mul", (a, b), a_data * b_data, bwd)


def scale(x: Tensor, c: float) -> Tensor:
    def bwd(g):
        return (g * c,)

    return _finish("scale", (x,), x.data * REAL(c), bwd)


def softmax(x: Tensor, axis: int) -> Tensor:
    """Stable softmax along ``axis`` (max-subtracted); slices sum to 1."""
    if not -x.ndim <= axis < x.ndim:
        raise DimensionError(f"softmax axis {axis} out of range for {x.shape}")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - dot),)

    return _finish("softmax", (x,), out, bwd)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis to zero mean / unit variance, then
    apply the gamma/beta affine."""
    d = x.shape[-1] if x.ndim else 0
    if d == 0:
        raise DimensionError("layer_norm over a zero-length last axis")
    if gamma.shape != (d,) or beta.shape != (d,):
        raise DimensionError(
            f"layer_norm affine shapes {gamma.shape}/{beta.shape} "
            f"do not match last extent {d}")
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + REAL(eps))
    xhat = (x.data - mu) * inv
    g_data = gamma.data

    def bwd(g):
        dbeta = g.reshape(-1, d).sum(axis=0) if beta.requires_grad else None
        dgamma = ((g * xhat).reshape(-1, d).sum(axis=0)
                  if gamma.requires_grad else None)
        dx = None
        if x.requires_grad:
            gg = g * g_data
            m1 = gg.mean(axis=-1, keepdims=True)
            m2 = (gg * xhat).mean(axis=-1, keepdims=True)
            dx = inv * (gg - m1 - xhat * m2)
        return (dx, dgamma, dbeta)

    return _finish("layer_norm", (x, gamma, beta), xhat * g_data + beta.data, bwd)


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(x: Tensor) -> Tensor:
    """GeLU via the tanh approximation 0.5x(1+tanh(√(2/π)(x+0.044715x³)))."""
    xd = x.data
    inner = REAL(_GELU_C) * (xd + REAL(0.044715) * xd * xd * xd)
    t = np.tanh(inner)

    def bwd(g):
        sech2 = 1.0 - t * t
        dinner = REAL(_GELU_C) * (1.0 + 3.0 * REAL(0.044715) * xd * xd)
        return (g * (0.5 * (1.0 + t) + 0.5 * xd * sech2 * dinner),)

    return _finish("gelu", (x,), 0.5 * xd * (1.0 + t), bwd)


def log(x: Tensor, floor: float = 1e-12) -> Tensor:
    """Natural log with inputs clamped at ``floor``; clamped entries get
    zero gradient."""
    clamped = np.maximum(x.data, REAL(floor))
    inside = x.data > REAL(floor)

    def bwd(g):
        return (np.where(inside, g / clamped, REAL(0.0)),)

    return _finish("log", (x,), np.log(clamped), bwd)


def sum_all(x: Tensor) -> Tensor:
    """Reduce every entry to a scalar (shape ())."""
    shape = x.shape

    def bwd(g):
        return (np.full(shape, g.reshape(()), dtype=REAL),)

    return _finish("sum_all", (x,), x.data.sum(dtype=np.float64), bwd)


def transpose(x: Tensor) -> Tensor:
    if x.ndim != 2:
        raise DimensionError(f"transpose needs a rank-2 tensor, got {x.shape}")

    def bwd(g):
        return (g.T,)

    return _finish("transpose", (x,), x.data.T, bwd)


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    if int(np.prod(shape, dtype=np.int64)) != x.size:
        raise DimensionError(f"cannot reshape {x.shape} to {shape}")
    old = x.shape

    def bwd(g):
        return (g.reshape(old),)

    return _finish("reshape", (x,), x.data.reshape(shape), bwd)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    """Concatenate rank-1 (axis 0) or rank-2 (axis 0/1) tensors."""
    if not tensors:
        raise DimensionError("concat of an empty sequence")
    ndim = tensors[0].ndim
    if any(t.ndim != ndim for t in tensors):
        raise DimensionError("concat inputs must share rank")
    if not 0 <= axis < ndim:
        raise DimensionError(f"concat axis {axis} out of range for rank {ndim}")
    sizes = [t.shape[axis] for t in tensors]
    tensors = tuple(tensors)

    def bwd(g):
        pieces = np.split(g, np.cumsum(sizes)[:-1], axis=axis)
        return tuple(p if t.requires_grad else None
                     for p, t in zip(pieces, tensors))

    return _finish("concat", tensors,
                   np.concatenate([t.data for t in tensors], axis=axis), bwd)


def narrow(x: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice of ``length`` entries along ``axis``."""
    if not 0 <= axis < x.ndim:
        raise DimensionError(f"narrow axis {axis} out of range for {x.shape}")
    if start < 0 or length < 1 or start + length > x.shape[axis]:
        raise DimensionError(
            f"narrow [{start}:{start + length}) exceeds axis {axis} of {x.shape}")
    sel = tuple(slice(start, start + length) if i == axis else slice(None)
                for i in range(x.ndim))
    in_shape = x.shape

    def bwd(g):
        out = np.zeros(in_shape, dtype=REAL)
        out[sel] = g
        return (out,)

    return _finish("narrow", (x,), x.data[sel], bwd)


def take_rows(x: Tensor, indices) -> Tensor:
    """Row lookup (embedding-style); repeated indices accumulate gradient."""
    if x.ndim != 2:
        raise DimensionError(f"take_rows needs a rank-2 tensor, got {x.shape}")
    idx = np.asarray(indices, dtype=np.int64)
    if idx.ndim != 1:
        raise DimensionError("take_rows indices must be a flat sequence")
    if idx.size and (idx.min() < 0 or idx.max() >= x.shape[0]):
        raise ContractError(
            f"row index out of range [0, {x.shape[0]}) in take_rows")
    in_shape = x.shape

    def bwd(g):
        out = np.zeros(in_shape, dtype=REAL)
        np.add.at(out, idx, g)
        return (out,)

    return _finish("take_rows", (x,), x.data[idx], bwd)


def gather_flat(x: Tensor, flat_indices: np.ndarray, out_shape) -> Tensor:
    """Gather by flat row-major index; the building block for patch
    extraction. Backward scatter-adds into the source."""
    idx = np.asarray(flat_indices, dtype=np.int64).reshape(-1)
    out_shape = tuple(out_shape)
    if idx.size != int(np.prod(out_shape, dtype=np.int64)):
        raise DimensionError(
            f"gather_flat index count {idx.size} does not fill {out_shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= x.size):
        raise ContractError(f"flat index out of range [0, {x.size})")
    in_shape = x.shape

    def bwd(g):
        out = np.zeros(int(np.prod(in_shape, dtype=np.int64)), dtype=REAL)
        np.add.at(out, idx, g.reshape(-1))
        return (out.reshape(in_shape),)

    return _finish("gather_flat", (x,), x.data.reshape(-1)[idx].reshape(out_shape), bwd)


# --- finite-difference oracle ----------------------------------------------

@dataclass
class GradCheckReport:
    """Outcome of comparing analytic gradients to central differences."""

    max_rel_err: float
    tol: float
    passed: bool
    checked: int
    worst_index: int | None


def grad_check(f: Callable[[Tensor], Tensor], x: Tensor, h: float = 1e-3,
               tol: float = 1e-3, indices: Sequence[int] | None = None) -> GradCheckReport:
    """Compare the analytic gradient of scalar-valued ``f`` at ``x`` against
    central finite differences.

    The difference quotient is accumulated in 64-bit using the actually
    representable float32 perturbations. Relative error per coordinate is
    ``|a - n| / max(1, |a|, |n|)``; the report carries the max over all
    checked coordinates (all of them unless ``indices`` narrows the scan).
    """
    probe = x.copy(requires_grad=True)
    with GradGraph() as graph:
        y = f(probe)
        if y.size != 1:
            raise ContractError(
                f"grad_check needs a scalar-valued f, got shape {y.shape}")
        graph.backward(y)
    analytic = probe.grad
    if analytic is None:
        analytic = np.zeros(x.shape, dtype=REAL)
    analytic = analytic.reshape(-1).astype(np.float64)

    if indices is None:
        indices = range(x.size)

    def eval_at(flat: np.ndarray) -> float:
        with pause_recording():
            out = f(Tensor(flat.reshape(x.shape)))
        if out.size != 1:
            raise ContractError("f stopped being scalar-valued during probing")
        return float(np.float64(out.data.reshape(())))

    base = x.data.reshape(-1)
    max_rel = 0.0
    worst = None
    checked = 0
    for i in indices:
        plus = base.copy()
        minus = base.copy()
        plus[i] = REAL(np.float64(base[i]) + h)
        minus[i] = REAL(np.float64(base[i]) - h)
        span = np.float64(plus[i]) - np.float64(minus[i])
        numeric = (eval_at(plus) - eval_at(minus)) / span
        a = analytic[i]
        rel = abs(a - numeric) / max(1.0, abs(a), abs(numeric))
        checked += 1
        if rel > max_rel:
            max_rel = rel
            worst = int(i)
    return GradCheckReport(max_rel_err=max_rel, tol=tol,
                           passed=max_rel < tol, checked=checked,
                           worst_index=worst)
