"""Dense float64 tensors with taped reverse-mode differentiation.

The engine is deliberately small: row-major numpy buffers with explicit
shape metadata, a fixed set of operations, and an explicit tape of
recorded nodes.  There is no view aliasing across operations (slices and
reshapes copy), no dtype other than float64, and no broadcasting beyond
leading-axis expansion.  Those restrictions keep the backward pass exact
and make shape mistakes fail loudly instead of silently broadcasting.

Recording model
---------------
Operations record onto the innermost active ``Tape`` context, and only
when at least one input requires gradients.  Outside a tape context every
operation is forward-only and its output does not require gradients, which
is how no-gradient evaluation passes are run.

``backward(loss)`` sweeps the loss' tape in reverse recording order.  Node
append order is a topological order by construction, so the sweep visits
each node exactly once.  Each call computes a complete gradient into
private buffers and then adds it into ``Tensor.grad``, so repeated calls
without ``zero_grad`` accumulate (two identical calls double every
gradient exactly).
"""

from __future__ import annotations

import math
import threading
from typing import Callable, Sequence

import numpy as np
from scipy.special import erf

from .errors import ContractError, NumericalError, ShapeError

__all__ = [
    "Tensor",
    "Tape",
    "backward",
    "zero_grads",
    "add",
    "sub",
    "mul",
    "scale",
    "matmul",
    "transpose",
    "reshape",
    "concat",
    "slice_axis",
    "embedding_lookup",
    "softmax_rows",
    "layer_norm",
    "sigmoid",
    "gelu",
    "exp",
    "log",
    "sum_all",
    "mean_all",
    "frobenius_norm",
    "bce_with_logits",
    "bernoulli_symmetric_kl",
]

LAYER_NORM_EPS = 1e-6
PROB_CLAMP = 1e-7


class Tensor:
    """A dense float64 array, optionally participating in a tape.

    ``data`` is always a C-contiguous float64 ndarray; ``grad`` is either
    None or an ndarray of identical shape.  Tensors with populated data
    are treated as immutable once recorded on a tape; parameter updates
    happen between steps by writing ``data`` in place while no tape is
    active.
    """

    __slots__ = ("data", "grad", "requires_grad", "_tape")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if not arr.flags.c_contiguous:
            # ascontiguousarray would also promote 0-d scalars to 1-d
            arr = np.ascontiguousarray(arr)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._tape: "Tape | None" = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def detached(self) -> "Tensor":
        """A requires_grad=False copy sharing no buffers with this tensor."""
        return Tensor(self.data.copy())

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # Operator sugar; the free functions are the primary API.
    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    def __rmul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(_as_tensor(other), self)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


class _Node:
    __slots__ = ("op", "inputs", "output", "backward_fn")

    def __init__(self, op: str, inputs: tuple[Tensor, ...], output: Tensor,
                 backward_fn: Callable[[np.ndarray], Sequence[np.ndarray | None]]):
        self.op = op
        self.inputs = inputs
        self.output = output
        self.backward_fn = backward_fn


# per-thread so no-grad evaluation can fan out over worker threads
_TAPE_STATE = threading.local()


def _tape_stack() -> list["Tape | None"]:
    stack = getattr(_TAPE_STATE, "stack", None)
    if stack is None:
        stack = _TAPE_STATE.stack = []
    return stack


class Tape:
    """An ordered record of operations; a context manager that activates
    recording for its dynamic extent."""

    def __init__(self):
        self.nodes: list[_Node] = []

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        _tape_stack().pop()

    def __len__(self) -> int:
        return len(self.nodes)


class pause_tape:
    """Temporarily disable recording (for anchor/no-gradient passes inside
    a recorded region)."""

    def __enter__(self):
        _tape_stack().append(None)
        return self

    def __exit__(self, *exc):
        _tape_stack().pop()


def _active_tape() -> "Tape | None":
    stack = _tape_stack()
    return stack[-1] if stack else None


def _record(op: str, inputs: tuple[Tensor, ...], out_data: np.ndarray,
            backward_fn: Callable[[np.ndarray], Sequence[np.ndarray | None]]) -> Tensor:
    tape = _active_tape()
    track = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=track)
    if track:
        out._tape = tape
        tape.nodes.append(_Node(op, inputs, out, backward_fn))
    return out


def backward(loss: Tensor, tape: "Tape | None" = None) -> Tape:
    """Populate ``grad`` on every requires_grad tensor reachable from
    ``loss``; tensors not reachable are left untouched.

    Returns the tape that was swept.  Raises ContractError for a
    non-scalar loss or a loss that was never recorded.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward requires a scalar loss, got shape {loss.shape}")
    tape = tape if tape is not None else loss._tape
    if tape is None:
        raise ContractError("loss is not attached to a tape (was it recorded?)")

    # Private buffers so each call contributes one full, independent
    # gradient; Tensor.grad then accumulates across calls.
    pending: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    touched: dict[int, Tensor] = {id(loss): loss}

    for node in reversed(tape.nodes):
        g_out = pending.get(id(node.output))
        if g_out is None:
            continue
        grads = node.backward_fn(g_out)
        for inp, g in zip(node.inputs, grads):
            if g is None or not inp.requires_grad:
                continue
            if g.shape != inp.data.shape:
                raise ShapeError(
                    f"backward of {node.op}: gradient shape {g.shape} does not "
                    f"match input shape {inp.data.shape}")
            key = id(inp)
            if key in pending:
                pending[key] += g
            else:
                pending[key] = g.copy()
                touched[key] = inp

    for key, tensor in touched.items():
        if not tensor.requires_grad:
            continue
        g = pending[key]
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient for tensor of shape {tensor.shape}")
        if tensor.grad is None:
            tensor.grad = g.copy()
        else:
            tensor.grad += g
    return tape


def zero_grads(tensors) -> None:
    """Clear gradients on an iterable (or name->Tensor mapping) of tensors."""
    values = tensors.values() if isinstance(tensors, dict) else tensors
    for t in values:
        t.zero_grad()


# ---------------------------------------------------------------------------
# elementwise arithmetic with leading-axis broadcasting

def _check_broadcast(op: str, sa: tuple[int, ...], sb: tuple[int, ...]) -> None:
    if sa == sb:
        return
    small, big = (sa, sb) if len(sa) < len(sb) else (sb, sa)
    if len(small) == len(big) or big[len(big) - len(small):] != small:
        raise ShapeError(f"{op}: shapes {sa} and {sb} are not equal and the smaller "
                         f"is not a trailing suffix of the larger (only leading-axis "
                         f"broadcasting is supported)")


def _reduce_to(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    return g


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast("add", a.shape, b.shape)
    out = a.data + b.data

    def back(g):
        return _reduce_to(g, a.shape), _reduce_to(g, b.shape)

    return _record("add", (a, b), out, back)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast("sub", a.shape, b.shape)
    out = a.data - b.data

    def back(g):
        return _reduce_to(g, a.shape), _reduce_to(-g, b.shape)

    return _record("sub", (a, b), out, back)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product; shapes must be equal or one a trailing suffix
    of the other (leading-axis expansion only)."""
    _check_broadcast("mul", a.shape, b.shape)
    out = a.data * b.data

    def back(g):
        return _reduce_to(g * b.data, a.shape), _reduce_to(g * a.data, b.shape)

    return _record("mul", (a, b), out, back)


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    out = a.data * c

    def back(g):
        return (g * c,)

    return _record("scale", (a,), out, back)


# ---------------------------------------------------------------------------
# linear algebra

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(f"matmul requires 2-D operands, got {a.shape} @ {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dimensions disagree: {a.shape} @ {b.shape}")
    out = a.data @ b.data

    def back(g):
        return g @ b.data.T, a.data.T @ g

    return _record("matmul", (a, b), out, back)


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeError(f"transpose requires a 2-D tensor, got {a.shape}")
    out = np.ascontiguousarray(a.data.T)

    def back(g):
        return (np.ascontiguousarray(g.T),)

    return _record("transpose", (a,), out, back)


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(int(s) for s in shape)
    if math.prod(shape) != a.size:
        raise ShapeError(f"reshape {a.shape} -> {shape}: element counts differ")
    out = a.data.reshape(shape).copy()

    def back(g):
        return (g.reshape(a.shape),)

    return _record("reshape", (a,), out, back)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        raise ShapeError("concat of an empty sequence")
    nd = tensors[0].data.ndim
    for t in tensors[1:]:
        if t.data.ndim != nd:
            raise ShapeError(f"concat: rank mismatch {tensors[0].shape} vs {t.shape}")
        for ax in range(nd):
            if ax != axis and t.shape[ax] != tensors[0].shape[ax]:
                raise ShapeError(f"concat along axis {axis}: shapes {tensors[0].shape} "
                                 f"and {t.shape} disagree on axis {ax}")
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]

    def back(g):
        grads = []
        start = 0
        for n in sizes:
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(start, start + n)
            grads.append(np.ascontiguousarray(g[tuple(sl)]))
            start += n
        return grads

    return _record("concat", tuple(tensors), out, back)


def slice_axis(a: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Copy a contiguous range along one axis (no view aliasing)."""
    if axis < 0 or axis >= a.data.ndim:
        raise ShapeError(f"slice_axis: axis {axis} out of range for shape {a.shape}")
    if start < 0 or length < 0 or start + length > a.shape[axis]:
        raise ShapeError(f"slice_axis: range [{start}, {start + length}) out of bounds "
                         f"for axis {axis} of shape {a.shape}")
    sl = [slice(None)] * a.data.ndim
    sl[axis] = slice(start, start + length)
    out = a.data[tuple(sl)].copy()

    def back(g):
        full = np.zeros_like(a.data)
        full[tuple(sl)] = g
        return (full,)

    return _record("slice", (a,), out, back)


def embedding_lookup(table: Tensor, indices) -> Tensor:
    """Gather rows of a 2-D table; backward scatter-adds into the table."""
    if table.data.ndim != 2:
        raise ShapeError(f"embedding_lookup requires a 2-D table, got {table.shape}")
    idx = np.asarray(indices, dtype=np.int64)
    if idx.ndim != 1:
        raise ShapeError("embedding_lookup indices must be 1-D")
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise ShapeError(f"embedding_lookup index out of range for table {table.shape}")
    out = table.data[idx].copy() if idx.size else np.zeros((0, table.shape[1]))

    def back(g):
        gt = np.zeros_like(table.data)
        if idx.size:
            np.add.at(gt, idx, g)
        return (gt,)

    return _record("embedding_lookup", (table,), out, back)


# ---------------------------------------------------------------------------
# nonlinearities and normalization

def softmax_rows(a: Tensor) -> Tensor:
    """Row-wise softmax of a 2-D tensor, computed with max subtraction."""
    if a.data.ndim != 2:
        raise ShapeError(f"softmax_rows requires a 2-D tensor, got {a.shape}")
    if not np.all(np.isfinite(a.data)):
        raise NumericalError("softmax_rows: non-finite input")
    shifted = a.data - a.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=1, keepdims=True)

    def back(g):
        dot = (g * p).sum(axis=1, keepdims=True)
        return (p * (g - dot),)

    return _record("softmax_rows", (a,), p, back)


def layer_norm(a: Tensor, gain: Tensor, bias: Tensor) -> Tensor:
    """Normalize the last axis to mean 0 / variance 1, then apply an
    elementwise affine.  Epsilon sits inside the square root."""
    d = a.shape[-1] if a.data.ndim else 0
    if d < 2:
        raise ShapeError(f"layer_norm: last axis must have length >= 2, got shape {a.shape}")
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(f"layer_norm: gain/bias must have shape ({d},), got "
                         f"{gain.shape} and {bias.shape}")
    mu = a.data.mean(axis=-1, keepdims=True)
    xc = a.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LAYER_NORM_EPS)
    y = xc * inv
    out = y * gain.data + bias.data

    def back(g):
        lead = tuple(range(g.ndim - 1))
        g_gain = (g * y).sum(axis=lead) if lead else (g * y)
        g_bias = g.sum(axis=lead) if lead else g
        dy = g * gain.data
        g_a = inv * (dy - dy.mean(axis=-1, keepdims=True)
                     - y * (dy * y).mean(axis=-1, keepdims=True))
        return g_a, g_gain, g_bias

    return _record("layer_norm", (a, gain, bias), out, back)


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)

    def back(g):
        return (g * out * (1.0 - out),)

    return _record("sigmoid", (a,), out, back)


_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu(a: Tensor) -> Tensor:
    """Gaussian error linear unit, exact erf form."""
    x = a.data
    phi = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    out = x * phi

    def back(g):
        dens = np.exp(-0.5 * x * x) * _INV_SQRT2PI
        return (g * (phi + x * dens),)

    return _record("gelu", (a,), out, back)


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    if not np.all(np.isfinite(out)):
        raise NumericalError("exp overflow")

    def back(g):
        return (g * out,)

    return _record("exp", (a,), out, back)


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0.0):
        raise NumericalError("log of a non-positive value")
    out = np.log(a.data)

    def back(g):
        return (g / a.data,)

    return _record("log", (a,), out, back)


# ---------------------------------------------------------------------------
# reductions

def sum_all(a: Tensor) -> Tensor:
    out = np.asarray(a.data.sum())

    def back(g):
        return (np.full_like(a.data, float(g)),)

    return _record("sum_all", (a,), out, back)


def mean_all(a: Tensor) -> Tensor:
    if a.size == 0:
        raise ShapeError("mean_all of an empty tensor")
    return scale(sum_all(a), 1.0 / a.size)


def frobenius_norm(a: Tensor) -> Tensor:
    out = np.asarray(np.sqrt((a.data * a.data).sum()))

    def back(g):
        n = float(out)
        if n == 0.0:
            return (np.zeros_like(a.data),)
        return (a.data * (float(g) / n),)

    return _record("frobenius_norm", (a,), out, back)


# ---------------------------------------------------------------------------
# fused losses (probability clamping makes these awkward to compose from
# primitives; gradients are exact for the clamped forms)

def bce_with_logits(logits: Tensor, targets: Tensor) -> Tensor:
    """Mean binary cross-entropy over all elements against multi-hot
    targets, with probabilities clamped to [1e-7, 1 - 1e-7].

    Gradients flow to ``logits`` only; ``targets`` is treated as constant.
    """
    if logits.shape != targets.shape:
        raise ShapeError(f"bce_with_logits: logits {logits.shape} vs targets {targets.shape}")
    x = logits.data
    y = targets.data
    p = np.empty_like(x)
    pos = x >= 0
    p[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    p[~pos] = ex / (1.0 + ex)
    pc = np.clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP)
    n = x.size
    loss = -(y * np.log(pc) + (1.0 - y) * np.log(1.0 - pc)).sum() / n
    out = np.asarray(loss)
    inside = (p > PROB_CLAMP) & (p < 1.0 - PROB_CLAMP)

    def back(g):
        gl = np.where(inside, (p - y) / n, 0.0) * float(g)
        return gl, None

    return _record("bce_with_logits", (logits, targets), out, back)


def bernoulli_symmetric_kl(p_adv: Tensor, p_ref: Tensor) -> Tensor:
    """Mean symmetric KL divergence between per-label Bernoulli
    distributions, both sides clamped to [1e-7, 1 - 1e-7].

    Gradients flow to ``p_adv`` only; ``p_ref`` is the constant anchor.
    """
    if p_adv.shape != p_ref.shape:
        raise ShapeError(f"bernoulli_symmetric_kl: {p_adv.shape} vs {p_ref.shape}")
    p = np.clip(p_adv.data, PROB_CLAMP, 1.0 - PROB_CLAMP)
    q = np.clip(p_ref.data, PROB_CLAMP, 1.0 - PROB_CLAMP)
    n = p.size
    fwd = p * np.log(p / q) + (1.0 - p) * np.log((1.0 - p) / (1.0 - q))
    rev = q * np.log(q / p) + (1.0 - q) * np.log((1.0 - q) / (1.0 - p))
    out = np.asarray((fwd + rev).sum() / n)
    inside = (p_adv.data > PROB_CLAMP) & (p_adv.data < 1.0 - PROB_CLAMP)

    def back(g):
        d = (np.log(p / q) - np.log((1.0 - p) / (1.0 - q))
             - q / p + (1.0 - q) / (1.0 - p))
        gp = np.where(inside, d / n, 0.0) * float(g)
        return gp, None

    return _record("bernoulli_symmetric_kl", (p_adv, p_ref), out, back)
