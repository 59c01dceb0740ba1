"""Dense-array math with reverse-mode automatic differentiation.

A ``Tensor`` wraps a contiguous float numpy array. Every primitive records a
``TapeNode`` (parents + adjoint closure) on the tensor it produces; calling
``backward`` on a scalar replays those adjoints in reverse topological order,
which makes gradients deterministic given deterministic forward inputs.

Data is float32 by default (float64 is available for verification harnesses
such as finite-difference checks, where float32 rounding would swamp the
comparison). Reductions accumulate in float64 before rounding back, so sums,
softmax denominators, normalization statistics and log-sum-exp stay stable at
float32 storage precision.

The primitive set is deliberately small: matmul, add, mul, softmax,
layer_norm, gelu, gather, concat, slicing, reduce_sum/mean and
cross_entropy_logits. Everything downstream composes from these.
"""

from __future__ import annotations

import contextlib
import math
from typing import Optional, Sequence

import numpy as np
from scipy.special import erf

from .errors import DataError, NumericError, ShapeError, UsageError

FLOAT_DTYPES = (np.float32, np.float64)

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block (pure forward evaluation)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def is_grad_enabled() -> bool:
    return _grad_enabled


class TapeNode:
    """One recorded primitive: parent tensors plus the adjoint closure.

    ``backward_fn(grad_out)`` returns one gradient array (or None) per parent.
    """

    __slots__ = ("parents", "backward_fn", "op")

    def __init__(self, parents, backward_fn, op: str):
        self.parents = parents
        self.backward_fn = backward_fn
        self.op = op


class Tensor:
    """N-dimensional float array, optionally participating in the tape."""

    __slots__ = ("data", "requires_grad", "grad", "_node", "_backward_done")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data)
        if dtype is None:
            dtype = arr.dtype if arr.dtype in FLOAT_DTYPES else np.float32
        self.data = np.ascontiguousarray(arr, dtype=dtype)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._node: Optional[TapeNode] = None
        self._backward_done = False

    # -- introspection ------------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise UsageError(f"item() on non-scalar tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False, dtype=self.data.dtype)

    def zero_grad(self) -> None:
        self.grad = None
        self._backward_done = False

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name}{flag})"

    # -- operator sugar ------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, mul(other, -1.0) if isinstance(other, Tensor) else -other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return take(self, key)

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce_mean(self, axis=axis, keepdims=keepdims)

    def backward(self) -> None:
        backward(self)


def _wrap_const(value, dtype) -> Tensor:
    """Promote a python/numpy scalar or array to a constant Tensor."""
    return Tensor(np.asarray(value, dtype=dtype), requires_grad=False, dtype=dtype)


def _coerce_pair(a, b):
    if not isinstance(a, Tensor) and not isinstance(b, Tensor):
        raise UsageError("at least one operand must be a Tensor")
    if not isinstance(a, Tensor):
        a = _wrap_const(a, b.data.dtype)
    if not isinstance(b, Tensor):
        b = _wrap_const(b, a.data.dtype)
    if a.data.dtype != b.data.dtype:
        raise ShapeError(
            f"mixed dtypes {a.data.dtype.name} and {b.data.dtype.name}; "
            "cast explicitly"
        )
    return a, b


def _make(data, parents, backward_fn, op: str) -> Tensor:
    req = _grad_enabled and any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=req, dtype=data.dtype)
    if req:
        out._node = TapeNode(tuple(parents), backward_fn, op)
    return out


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    """Reduce a broadcast gradient back to the original operand shape."""
    if grad.shape == shape:
        return grad
    dtype = grad.dtype
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)), dtype=np.float64)
    axes = tuple(i for i, ext in enumerate(shape) if ext == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True, dtype=np.float64)
    return grad.astype(dtype, copy=False)


# -- primitives ---------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _coerce_pair(a, b)
    data = a.data + b.data

    def bw(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _make(data, (a, b), bw, "add")


def mul(a, b) -> Tensor:
    a, b = _coerce_pair(a, b)
    data = a.data * b.data

    def bw(g):
        return (
            _unbroadcast(g * b.data, a.data.shape),
            _unbroadcast(g * a.data, b.data.shape),
        )

    return _make(data, (a, b), bw, "mul")


def matmul(a: Tensor, b: Tensor, transpose_a: bool = False, transpose_b: bool = False) -> Tensor:
    """2-D matrix product with optional GEMM-style operand transposition."""
    if not isinstance(a, Tensor) or not isinstance(b, Tensor):
        raise UsageError("matmul operands must be Tensors")
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.data.dtype != b.data.dtype:
        raise ShapeError(f"matmul dtype mismatch: {a.data.dtype.name} vs {b.data.dtype.name}")
    A = a.data.T if transpose_a else a.data
    B = b.data.T if transpose_b else b.data
    if A.shape[1] != B.shape[0]:
        raise ShapeError(
            f"matmul: inner extents disagree for shapes {a.shape}"
            f"{'^T' if transpose_a else ''} x {b.shape}{'^T' if transpose_b else ''}"
        )
    data = A @ B

    def bw(g):
        dA = g @ B.T
        dB = A.T @ g
        da = dA.T if transpose_a else dA
        db = dB.T if transpose_b else dB
        return np.ascontiguousarray(da), np.ascontiguousarray(db)

    return _make(data, (a, b), bw, "matmul")


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Max-subtracted softmax along ``axis``; rows sum to 1 within 1e-6."""
    if np.isnan(x.data).any():
        raise NumericError("softmax input contains NaN")
    dtype = x.data.dtype
    m = np.max(x.data, axis=axis, keepdims=True)
    e = np.exp((x.data - m).astype(np.float64))
    s = e.sum(axis=axis, keepdims=True)
    p = (e / s).astype(dtype)

    def bw(g):
        inner = (g.astype(np.float64) * p).sum(axis=axis, keepdims=True)
        return ((g - inner.astype(dtype)) * p,)

    return _make(p, (x,), bw, "softmax")


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Zero-mean/unit-variance over the last axis, then affine by gain/bias."""
    if eps <= 0:
        raise UsageError("layer_norm: eps must be positive")
    h = x.data.shape[-1]
    if gain.data.shape != (h,) or bias.data.shape != (h,):
        raise ShapeError(
            f"layer_norm: gain/bias must be shape ({h},), got {gain.shape} and {bias.shape}"
        )
    dtype = x.data.dtype
    x64 = x.data.astype(np.float64)
    mu = x64.mean(axis=-1, keepdims=True)
    var = ((x64 - mu) ** 2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat64 = (x64 - mu) * inv
    xhat = xhat64.astype(dtype)
    data = xhat * gain.data + bias.data

    def bw(g):
        g64 = g.astype(np.float64)
        dgain = _unbroadcast(g64 * xhat64, gain.data.shape).astype(dtype)
        dbias = _unbroadcast(g64, bias.data.shape).astype(dtype)
        dxhat = g64 * gain.data.astype(np.float64)
        term = dxhat - dxhat.mean(axis=-1, keepdims=True) \
            - xhat64 * (dxhat * xhat64).mean(axis=-1, keepdims=True)
        dx = (term * inv).astype(dtype)
        return dx, dgain, dbias

    return _make(data, (x, gain, bias), bw, "layer_norm")


_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu(x: Tensor, approximate: bool = False) -> Tensor:
    """Gaussian error linear unit, exact CDF form by default.

    ``approximate=True`` switches to the tanh approximation.
    """
    dtype = x.data.dtype
    x64 = x.data.astype(np.float64)
    if approximate:
        c = math.sqrt(2.0 / math.pi)
        inner = c * (x64 + 0.044715 * x64 ** 3)
        t = np.tanh(inner)
        data = (0.5 * x64 * (1.0 + t)).astype(dtype)

        def bw(g):
            dinner = c * (1.0 + 3 * 0.044715 * x64 ** 2)
            d = 0.5 * (1.0 + t) + 0.5 * x64 * (1.0 - t ** 2) * dinner
            return ((g.astype(np.float64) * d).astype(dtype),)

    else:
        cdf = 0.5 * (1.0 + erf(x64 * _INV_SQRT2))
        data = (x64 * cdf).astype(dtype)

        def bw(g):
            pdf = np.exp(-0.5 * x64 ** 2) * _INV_SQRT2PI
            d = cdf + x64 * pdf
            return ((g.astype(np.float64) * d).astype(dtype),)

    return _make(data, (x,), bw, "gelu")


def gather(table: Tensor, indices) -> Tensor:
    """Select rows of a 2-D table by integer index (embedding lookup)."""
    idx = np.asarray(indices, dtype=np.int64)
    if table.data.ndim != 2:
        raise ShapeError(f"gather expects a 2-D table, got {table.shape}")
    n = table.data.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise DataError(
            f"gather index out of range [0, {n}): min={idx.min()}, max={idx.max()}"
        )
    data = table.data[idx]

    def bw(g):
        buf = np.zeros_like(table.data)
        np.add.at(buf, idx, g)
        return (buf,)

    return _make(data, (table,), bw, "gather")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    ts = list(tensors)
    if not ts:
        raise UsageError("concat of an empty sequence")
    dtype = ts[0].data.dtype
    for t in ts:
        if t.data.dtype != dtype:
            raise ShapeError("concat: mixed dtypes")
    data = np.concatenate([t.data for t in ts], axis=axis)
    sizes = [t.data.shape[axis] for t in ts]
    offsets = np.cumsum([0] + sizes)

    def bw(g):
        out = []
        for i in range(len(ts)):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(offsets[i], offsets[i + 1])
            out.append(np.ascontiguousarray(g[tuple(sl)]))
        return tuple(out)

    return _make(data, ts, bw, "concat")


def _check_basic_key(key):
    parts = key if isinstance(key, tuple) else (key,)
    for p in parts:
        if not isinstance(p, (int, np.integer, slice)):
            raise UsageError(
                "slicing supports ints and slices only; use gather() for index arrays"
            )


def take(x: Tensor, key) -> Tensor:
    """Basic slicing (ints and slices); gradients scatter back into place."""
    _check_basic_key(key)
    data = np.ascontiguousarray(x.data[key])

    def bw(g):
        buf = np.zeros_like(x.data)
        buf[key] = g
        return (buf,)

    return _make(data, (x,), bw, "slice")


def reduce_sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    dtype = x.data.dtype
    data = x.data.sum(axis=axis, keepdims=keepdims, dtype=np.float64).astype(dtype)

    def bw(g):
        g2 = g
        if axis is not None and not keepdims:
            g2 = np.expand_dims(g, axis)
        return (np.broadcast_to(g2, x.data.shape).astype(dtype, copy=True),)

    return _make(data, (x,), bw, "reduce_sum")


def reduce_mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    dtype = x.data.dtype
    if axis is None:
        count = x.data.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([x.data.shape[a] for a in axes]))
    data = x.data.mean(axis=axis, keepdims=keepdims, dtype=np.float64).astype(dtype)

    def bw(g):
        g2 = g
        if axis is not None and not keepdims:
            g2 = np.expand_dims(g, axis)
        return ((np.broadcast_to(g2, x.data.shape) / count).astype(dtype, copy=False),)

    return _make(data, (x,), bw, "reduce_mean")


IGNORE_INDEX = -100


def cross_entropy_logits(logits: Tensor, targets, ignore_index: int = IGNORE_INDEX) -> Tensor:
    """Mean negative log-likelihood over non-ignored positions.

    ``logits`` is [n, c]; ``targets`` is an int array of length n whose
    entries are class indices or ``ignore_index``. With every position
    ignored the loss is a constant 0 with no gradient.
    """
    if logits.data.ndim != 2:
        raise ShapeError(f"cross_entropy_logits expects [n, c] logits, got {logits.shape}")
    t = np.asarray(targets, dtype=np.int64)
    n, c = logits.data.shape
    if t.shape != (n,):
        raise ShapeError(f"targets shape {t.shape} does not match logits rows {n}")
    valid = t != ignore_index
    bad = valid & ((t < 0) | (t >= c))
    if bad.any():
        raise DataError(f"class target out of range [0, {c}): {t[bad][:5].tolist()}")
    nv = int(valid.sum())
    dtype = logits.data.dtype
    if nv == 0:
        return Tensor(np.asarray(0.0, dtype=dtype), requires_grad=False, dtype=dtype)

    z64 = logits.data.astype(np.float64)
    m = z64.max(axis=1, keepdims=True)
    ez = np.exp(z64 - m)
    lse = np.log(ez.sum(axis=1)) + m[:, 0]
    rows = np.arange(n)
    nll = lse - z64[rows, t.clip(0, c - 1)]
    loss = (nll[valid].sum() / nv).astype(dtype)

    def bw(g):
        p = (ez / ez.sum(axis=1, keepdims=True)).astype(np.float64)
        grad = p.copy()
        grad[rows[valid], t[valid]] -= 1.0
        grad[~valid] = 0.0
        grad *= float(g) / nv
        return (grad.astype(dtype),)

    return _make(np.asarray(loss, dtype=dtype), (logits,), bw, "cross_entropy")


# -- backward -----------------------------------------------------------------


def _toposort(root: Tensor):
    order = []
    seen = set()
    stack = [(root, False)]
    while stack:
        t, expanded = stack.pop()
        if expanded:
            order.append(t)
            continue
        if id(t) in seen:
            continue
        seen.add(id(t))
        stack.append((t, True))
        if t._node is not None:
            for p in t._node.parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every reachable leaf with requires_grad.

    ``loss`` must be a scalar recorded on the tape. A second call on the same
    tensor raises; rebuild the graph (a fresh forward pass) to differentiate
    again. Leaf gradients accumulate into any existing ``grad`` buffer.
    """
    if not isinstance(loss, Tensor):
        raise UsageError("backward expects a Tensor")
    if loss.data.size != 1:
        raise UsageError(f"backward expects a scalar loss, got shape {loss.shape}")
    if loss._backward_done:
        raise UsageError(
            "backward() was already called on this tensor; rebuild the graph first"
        )
    if not loss.requires_grad or loss._node is None:
        raise UsageError("loss is not connected to any gradient-requiring input")

    order = _toposort(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    # Reverse topological order; grad buffers are never mutated in place, so
    # adjoints that alias their upstream gradient stay safe to share.
    for t in reversed(order):
        g = grads.pop(id(t), None)
        if g is None:
            continue
        if t._node is None:
            t.grad = g if t.grad is None else t.grad + g
            continue
        parent_grads = t._node.backward_fn(g)
        for p, pg in zip(t._node.parents, parent_grads):
            if pg is None or not p.requires_grad:
                continue
            if pg.shape != p.data.shape:
                raise ShapeError(
                    f"internal: adjoint of {t._node.op} produced shape {pg.shape} "
                    f"for parent of shape {p.data.shape}"
                )
            prev = grads.get(id(p))
            grads[id(p)] = pg if prev is None else prev + pg
    loss._backward_done = True
