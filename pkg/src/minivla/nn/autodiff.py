"""Reverse-mode automatic differentiation over dense numpy arrays.

Every operation records a backward closure on a tape (the implicit graph of
``_parents`` links); ``backward`` replays the tape in reverse topological
order. Training code runs the same graphs in float32, gradient tests in
float64 -- dtype follows the inputs throughout.

Only the shapes the model needs are supported: no generic broadcasting
beyond elementwise ops with numpy semantics, no in-place mutation of live
graph nodes.
"""

from __future__ import annotations

import threading

import numpy as np
from scipy.special import erf

__all__ = [
    "Tensor",
    "ShapeError",
    "MaskError",
    "no_grad",
    "grad_enabled",
    "tensor",
    "add",
    "sub",
    "mul",
    "matmul",
    "gelu",
    "softmax",
    "layer_norm",
    "conv1d",
    "embedding",
    "reshape",
    "transpose",
    "concat",
    "repeat",
    "reduce_sum",
    "reduce_mean",
    "reduce_max",
    "backward",
]


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class MaskError(ValueError):
    """An attention mask leaves some query with no visible key."""


_local = threading.local()


def grad_enabled() -> bool:
    return getattr(_local, "grad", True)


class no_grad:
    """Context manager that disables tape recording (inference mode)."""

    def __enter__(self):
        self._prev = grad_enabled()
        _local.grad = False
        return self

    def __exit__(self, *exc):
        _local.grad = self._prev
        return False


class Tensor:
    """A dense array with an optional gradient buffer of identical shape."""

    __slots__ = ("data", "grad", "requires_grad", "_backward", "_parents")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._backward = None
        self._parents = ()

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self):
        return self.data.ndim

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    # operator sugar; all arithmetic routes through the module-level ops
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], (tuple, list)) else shape)

    def transpose(self, axes):
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce_mean(self, axis=axis, keepdims=keepdims)


def tensor(data, requires_grad: bool = False, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


def _as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.data.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def _make(data: np.ndarray, parents, backward_fn) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out._backward = None
    out._parents = ()
    out.requires_grad = False
    if grad_enabled():
        grad_parents = tuple(p for p in parents if p.requires_grad or p._backward is not None)
        if grad_parents:
            out.requires_grad = True
            out._parents = grad_parents
            out._backward = backward_fn
    return out


def _accumulate(node: Tensor, g: np.ndarray):
    if g.shape != node.data.shape:
        raise ShapeError(f"gradient shape {g.shape} does not match tensor shape {node.data.shape}")
    if node.grad is None:
        node.grad = g.copy() if not g.flags.owndata else g
    else:
        node.grad = node.grad + g


def _needs(node: Tensor) -> bool:
    return node.requires_grad or node._backward is not None


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a gradient down to the shape it was broadcast from."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise ops


def add(a, b) -> Tensor:
    a = _as_tensor(a, like=b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, like=a)
    data = a.data + b.data

    def bw(g):
        if _needs(a):
            _accumulate(a, _unbroadcast(g, a.data.shape))
        if _needs(b):
            _accumulate(b, _unbroadcast(g, b.data.shape))

    return _make(data, (a, b), bw)


def sub(a, b) -> Tensor:
    a = _as_tensor(a, like=b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, like=a)
    data = a.data - b.data

    def bw(g):
        if _needs(a):
            _accumulate(a, _unbroadcast(g, a.data.shape))
        if _needs(b):
            _accumulate(b, _unbroadcast(-g, b.data.shape))

    return _make(data, (a, b), bw)


def mul(a, b) -> Tensor:
    a = _as_tensor(a, like=b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, like=a)
    data = a.data * b.data

    def bw(g):
        if _needs(a):
            _accumulate(a, _unbroadcast(g * b.data, a.data.shape))
        if _needs(b):
            _accumulate(b, _unbroadcast(g * a.data, b.data.shape))

    return _make(data, (a, b), bw)


_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)


def gelu(x: Tensor) -> Tensor:
    """Exact (erf-based) GELU."""
    x = _as_tensor(x)
    xd = x.data
    cdf = 0.5 * (1.0 + erf(xd * _INV_SQRT2))
    data = xd * cdf

    def bw(g):
        if _needs(x):
            pdf = _INV_SQRT2PI * np.exp(-0.5 * xd * xd)
            _accumulate(x, (g * (cdf + xd * pdf)).astype(xd.dtype, copy=False))

    return _make(data.astype(xd.dtype, copy=False), (x,), bw)


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a, b) -> Tensor:
    a = _as_tensor(a)
    b = _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul requires rank >= 2 operands, got {a.data.shape} and {b.data.shape}")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ShapeError(f"matmul inner extents disagree: {a.data.shape} @ {b.data.shape}")
    # batched stack against a plain matrix: run one large gemm instead of
    # one small gemm per batch element
    flat_case = b.ndim == 2 and a.ndim > 2
    if flat_case:
        lead = a.data.shape[:-1]
        data = (a.data.reshape(-1, a.data.shape[-1]) @ b.data).reshape(*lead, b.data.shape[-1])
    else:
        data = a.data @ b.data

    def bw(g):
        if flat_case:
            g2 = g.reshape(-1, g.shape[-1])
            if _needs(a):
                _accumulate(a, (g2 @ b.data.T).reshape(a.data.shape))
            if _needs(b):
                _accumulate(b, a.data.reshape(-1, a.data.shape[-1]).T @ g2)
            return
        if _needs(a):
            ga = g @ np.swapaxes(b.data, -1, -2)
            _accumulate(a, _unbroadcast(ga, a.data.shape))
        if _needs(b):
            gb = np.swapaxes(a.data, -1, -2) @ g
            _accumulate(b, _unbroadcast(gb, b.data.shape))

    return _make(data, (a, b), bw)


def softmax(x: Tensor, keep=None) -> Tensor:
    """Numerically stable softmax over the last axis.

    ``keep`` is an optional boolean array (broadcastable to ``x``) marking
    visible entries; masked entries receive exactly zero weight. A row with
    no visible entry is rejected.
    """
    x = _as_tensor(x)
    z = x.data
    if keep is not None:
        keep = np.broadcast_to(np.asarray(keep, dtype=bool), z.shape)
        if not keep.any(axis=-1).all():
            raise MaskError("softmax: at least one row has every key masked")
        z = np.where(keep, z, -np.inf)
    m = z.max(axis=-1, keepdims=True)
    e = np.exp(z - m)
    p = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        if _needs(x):
            inner = (g * p).sum(axis=-1, keepdims=True)
            _accumulate(x, p * (g - inner))

    return _make(p, (x,), bw)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale and shift."""
    x = _as_tensor(x)
    gain = _as_tensor(gain)
    bias = _as_tensor(bias)
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    data = gain.data * xhat + bias.data

    def bw(g):
        if _needs(bias):
            _accumulate(bias, _unbroadcast(g, bias.data.shape))
        if _needs(gain):
            _accumulate(gain, _unbroadcast(g * xhat, gain.data.shape))
        if _needs(x):
            gx = g * gain.data
            m1 = gx.mean(axis=-1, keepdims=True)
            m2 = (gx * xhat).mean(axis=-1, keepdims=True)
            _accumulate(x, inv * (gx - m1 - xhat * m2))

    return _make(data, (x, gain, bias), bw)


def conv1d(x: Tensor, kernels: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation along the last axis.

    ``x`` is (..., c_in, T) with at most one leading batch axis, ``kernels``
    is (c_out, c_in, k) with odd k. Output length T' must be positive.
    """
    x = _as_tensor(x)
    kernels = _as_tensor(kernels)
    squeeze = x.ndim == 2
    xd = x.data[None] if squeeze else x.data
    if xd.ndim != 3:
        raise ShapeError(f"conv1d input must be (c_in, T) or (B, c_in, T), got {x.data.shape}")
    c_out, c_in, k = kernels.data.shape
    if k % 2 == 0:
        raise ShapeError(f"conv1d kernel width must be odd, got {k}")
    B, cx, T = xd.shape
    if cx != c_in:
        raise ShapeError(f"conv1d channel mismatch: input {cx} vs kernels {c_in}")
    if T + 2 * padding < k:
        raise ShapeError(f"conv1d window {k} exceeds padded length {T + 2 * padding}")
    t_out = (T + 2 * padding - k) // stride + 1
    if t_out < 1:
        raise ShapeError("conv1d produces an empty output")

    xp = np.pad(xd, ((0, 0), (0, 0), (padding, padding))) if padding else xd
    # (B, c_in, T', k) windows, strided view then gathered by stride
    win = np.lib.stride_tricks.sliding_window_view(xp, k, axis=-1)[:, :, ::stride, :][:, :, :t_out]
    cols = win.transpose(0, 2, 1, 3).reshape(B, t_out, c_in * k)
    w2 = kernels.data.reshape(c_out, c_in * k)
    out = cols @ w2.T
    if bias is not None:
        bias = _as_tensor(bias)
        out = out + bias.data
    data = out.transpose(0, 2, 1)
    if squeeze:
        data = data[0]

    parents = (x, kernels) if bias is None else (x, kernels, bias)

    def bw(g):
        gb3 = g[None] if squeeze else g
        g2 = gb3.transpose(0, 2, 1)  # (B, T', c_out)
        if bias is not None and _needs(bias):
            _accumulate(bias, g2.sum(axis=(0, 1)))
        if _needs(kernels):
            gw2 = np.einsum("bto,btj->oj", g2, cols)
            _accumulate(kernels, gw2.reshape(c_out, c_in, k))
        if _needs(x):
            gcols = (g2 @ w2).reshape(B, t_out, c_in, k).transpose(0, 2, 1, 3)
            gxp = np.zeros_like(xp)
            pos0 = stride * np.arange(t_out)
            for j in range(k):
                gxp[:, :, j + pos0[0] : j + pos0[-1] + 1 : stride] += gcols[:, :, :, j]
            gx = gxp[:, :, padding : padding + T] if padding else gxp
            _accumulate(x, gx[0] if squeeze else gx)

    return _make(data, parents, bw)


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    """Row lookup into an embedding table; backward scatter-adds."""
    table = _as_tensor(table)
    ids = np.asarray(ids)
    if not np.issubdtype(ids.dtype, np.integer):
        raise ShapeError(f"embedding ids must be integers, got dtype {ids.dtype}")
    if ids.size and (ids.min() < 0 or ids.max() >= table.data.shape[0]):
        raise ShapeError(f"embedding id out of range for table of {table.data.shape[0]} rows")
    data = table.data[ids]

    def bw(g):
        if _needs(table):
            gt = np.zeros_like(table.data)
            np.add.at(gt, ids.ravel(), g.reshape(-1, table.data.shape[-1]))
            _accumulate(table, gt)

    return _make(data, (table,), bw)


# ---------------------------------------------------------------------------
# shape ops


def reshape(x: Tensor, shape) -> Tensor:
    x = _as_tensor(x)
    shape = tuple(shape)
    data = x.data.reshape(shape)

    def bw(g):
        if _needs(x):
            _accumulate(x, g.reshape(x.data.shape))

    return _make(data, (x,), bw)


def transpose(x: Tensor, axes) -> Tensor:
    x = _as_tensor(x)
    axes = tuple(axes)
    data = x.data.transpose(axes)
    inv = tuple(np.argsort(axes))

    def bw(g):
        if _needs(x):
            _accumulate(x, g.transpose(inv))

    return _make(data, (x,), bw)


def concat(parts, axis: int) -> Tensor:
    parts = [_as_tensor(p) for p in parts]
    data = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.data.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        chunks = np.split(g, splits, axis=axis)
        for p, c in zip(parts, chunks):
            if _needs(p):
                _accumulate(p, c)

    return _make(data, tuple(parts), bw)


def repeat(x: Tensor, reps: int, axis: int) -> Tensor:
    """Repeat each entry ``reps`` times along ``axis`` (nearest upsample)."""
    x = _as_tensor(x)
    data = np.repeat(x.data, reps, axis=axis)
    ax = axis % x.data.ndim

    def bw(g):
        if _needs(x):
            shape = list(x.data.shape)
            shape[ax : ax + 1] = [shape[ax], reps]
            _accumulate(x, g.reshape(shape).sum(axis=ax + 1))

    return _make(data, (x,), bw)


# ---------------------------------------------------------------------------
# reductions


def _axis_tuple(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        return (axis % ndim,)
    return tuple(a % ndim for a in axis)


def reduce_sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    x = _as_tensor(x)
    axes = _axis_tuple(axis, x.data.ndim)
    data = x.data.sum(axis=axes, keepdims=keepdims)

    def bw(g):
        if _needs(x):
            if not keepdims:
                g = np.expand_dims(g, axes)
            _accumulate(x, np.broadcast_to(g, x.data.shape).astype(x.data.dtype, copy=False))

    return _make(data, (x,), bw)


def reduce_mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    x = _as_tensor(x)
    axes = _axis_tuple(axis, x.data.ndim)
    n = int(np.prod([x.data.shape[a] for a in axes]))
    data = x.data.mean(axis=axes, keepdims=keepdims)

    def bw(g):
        if _needs(x):
            if not keepdims:
                g = np.expand_dims(g, axes)
            _accumulate(x, np.broadcast_to(g / n, x.data.shape).astype(x.data.dtype, copy=False))

    return _make(data, (x,), bw)


def reduce_max(x: Tensor, axis: int, keepdims: bool = False) -> Tensor:
    """Maximum along one axis; gradient routes to the first maximum."""
    x = _as_tensor(x)
    ax = axis % x.data.ndim
    data = x.data.max(axis=ax, keepdims=keepdims)
    idx = x.data.argmax(axis=ax)

    def bw(g):
        if _needs(x):
            if not keepdims:
                g = np.expand_dims(g, ax)
            gx = np.zeros_like(x.data)
            np.put_along_axis(gx, np.expand_dims(idx, ax), g, axis=ax)
            _accumulate(x, gx)

    return _make(data, (x,), bw)


# ---------------------------------------------------------------------------
# tape replay


def backward(out: Tensor, seed: np.ndarray | None = None):
    """Run reverse-mode accumulation from ``out`` through the whole tape."""
    if not out.requires_grad and out._backward is None:
        raise ValueError("backward called on a tensor with no recorded graph")
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(out, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited:
                stack.append((p, False))

    out.grad = np.ones_like(out.data) if seed is None else np.asarray(seed, dtype=out.data.dtype)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
            node.grad = None  # free intermediates; leaves have no _backward
