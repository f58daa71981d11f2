"""Differentiable array ops.

Every op validates shapes up front, computes the forward pass with
numpy, and (when grad mode is on and an input participates) records an
OpNode whose ``backward`` closure returns analytic vector-Jacobian
products.  Gradients of non-participating inputs are exactly zero: none
are recorded for them at all.

Layout conventions used throughout the package:
  * token matrices are [..., N, C] with C last,
  * images/feature maps for the conv kernels are [B, C, H, W],
  * softmax/normalization act on the last axis.
"""

from __future__ import annotations

import math
from typing import Optional, Sequence

import numpy as np

from ..errors import ConfigurationError, DimensionError, NumericsError
from . import flops as _flops
from .tensor import OpNode, Tensor, as_tensor, grad_enabled
from .tensor import debug_checks_enabled as _debug


def _result(data: np.ndarray, op: str, parents: Sequence[Tensor], backward) -> Tensor:
    if _debug() and not np.all(np.isfinite(data)):
        raise NumericsError(f"op {op!r} produced non-finite values")
    out = Tensor._wrap(np.ascontiguousarray(data))
    if grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.node = OpNode(op, tuple(parents), backward)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# arithmetic
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    data = a.data + b.data

    def backward(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _result(data, "add", (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    data = a.data - b.data

    def backward(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return _result(data, "sub", (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    data = a.data * b.data

    def backward(g):
        return (
            _unbroadcast(g * b.data, a.data.shape),
            _unbroadcast(g * a.data, b.data.shape),
        )

    return _result(data, "mul", (a, b), backward)


def neg(a) -> Tensor:
    a = as_tensor(a)

    def backward(g):
        return (-g,)

    return _result(-a.data, "neg", (a,), backward)


def scale(a, c: float) -> Tensor:
    """Multiply by a python scalar constant."""
    a = as_tensor(a)
    c = float(c)

    def backward(g):
        return (g * c,)

    return _result(a.data * c, "scale", (a,), backward)


# ---------------------------------------------------------------------------
# matmul
# ---------------------------------------------------------------------------

def matmul(a, b) -> Tensor:
    """Stacked matrix product over the last two axes (numpy @ semantics)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise DimensionError(f"matmul needs rank >= 2 operands, got {a.data.shape} @ {b.data.shape}")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise DimensionError(f"matmul inner extents differ: {a.data.shape} @ {b.data.shape}")
    data = a.data @ b.data
    _flops.record("matmul", 2 * data.size * a.data.shape[-1])

    def backward(g):
        da = _unbroadcast(g @ b.data.swapaxes(-1, -2), a.data.shape)
        db = _unbroadcast(a.data.swapaxes(-1, -2) @ g, b.data.shape)
        return da, db

    return _result(data, "matmul", (a, b), backward)


# ---------------------------------------------------------------------------
# nonlinearities / normalization
# ---------------------------------------------------------------------------

def softmax_rows(x) -> Tensor:
    """Numerically stable softmax along the last axis."""
    x = as_tensor(x)
    m = x.data.max(axis=-1, keepdims=True)
    e = np.exp(x.data - m)
    y = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        inner = (g * y).sum(axis=-1, keepdims=True)
        return (y * (g - inner),)

    return _result(y, "softmax_rows", (x,), backward)


def layernorm(x, gamma: Optional[Tensor] = None, beta: Optional[Tensor] = None, eps: float = 1e-6) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine.

    gamma/beta are optional [C] parameters; omitting both gives the
    plain normalized features (the form block modulation expects).
    """
    x = as_tensor(x)
    c = x.data.shape[-1]
    for name, p in (("gamma", gamma), ("beta", beta)):
        if p is not None and p.data.shape != (c,):
            raise DimensionError(f"layernorm {name} shape {p.data.shape} != ({c},)")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    y = xhat
    if gamma is not None:
        y = y * gamma.data
    if beta is not None:
        y = y + beta.data

    parents = [x] + [p for p in (gamma, beta) if p is not None]

    def backward(g):
        gx = g * gamma.data if gamma is not None else g
        mean_g = gx.mean(axis=-1, keepdims=True)
        mean_gx = (gx * xhat).mean(axis=-1, keepdims=True)
        dx = inv * (gx - mean_g - xhat * mean_gx)
        out = [dx]
        lead = tuple(range(g.ndim - 1))
        if gamma is not None:
            out.append((g * xhat).sum(axis=lead))
        if beta is not None:
            out.append(g.sum(axis=lead))
        return tuple(out)

    return _result(y, "layernorm", parents, backward)


def gelu(x) -> Tensor:
    """GELU, tanh approximation."""
    x = as_tensor(x)
    c = math.sqrt(2.0 / math.pi)
    a = 0.044715
    u = c * (x.data + a * x.data**3)
    t = np.tanh(u)
    y = 0.5 * x.data * (1.0 + t)

    def backward(g):
        du = c * (1.0 + 3.0 * a * x.data**2)
        dy = 0.5 * (1.0 + t) + 0.5 * x.data * (1.0 - t * t) * du
        return (g * dy,)

    return _result(y, "gelu", (x,), backward)


def silu(x) -> Tensor:
    x = as_tensor(x)
    s = 1.0 / (1.0 + np.exp(-x.data))
    y = x.data * s

    def backward(g):
        return (g * s * (1.0 + x.data * (1.0 - s)),)

    return _result(y, "silu", (x,), backward)


# ---------------------------------------------------------------------------
# convolutions (NCHW)
# ---------------------------------------------------------------------------

def depthwise_conv2d(x, kernels) -> Tensor:
    """Per-channel 2-D correlation with same-size zero padding.

    x: [B, C, H, W]; kernels: [C, k, k] with k odd.  A k=1 unit kernel
    reproduces the input bit for bit.
    """
    x, kernels = as_tensor(x), as_tensor(kernels)
    if x.data.ndim != 4:
        raise DimensionError(f"depthwise_conv2d expects [B,C,H,W], got {x.data.shape}")
    if kernels.data.ndim != 3 or kernels.data.shape[1] != kernels.data.shape[2]:
        raise DimensionError(f"kernels must be [C,k,k], got {kernels.data.shape}")
    b, c, h, w = x.data.shape
    if kernels.data.shape[0] != c:
        raise DimensionError(f"kernel channel count {kernels.data.shape[0]} != input channels {c}")
    k = kernels.data.shape[1]
    if k % 2 == 0:
        raise ConfigurationError(f"depthwise kernel size must be odd, got {k}")
    p = k // 2

    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p)))
    out = np.zeros_like(x.data)
    for u in range(k):
        for v in range(k):
            out += xp[:, :, u : u + h, v : v + w] * kernels.data[:, u, v][None, :, None, None]
    _flops.record("depthwise_conv2d", 2 * b * c * h * w * k * k)

    def backward(g):
        gp = np.pad(g, ((0, 0), (0, 0), (p, p), (p, p)))
        dx = np.zeros_like(x.data)
        dk = np.zeros_like(kernels.data)
        for u in range(k):
            for v in range(k):
                # dx: correlation of g with the 180-degree rotated kernel
                dx += gp[:, :, u : u + h, v : v + w] * kernels.data[:, k - 1 - u, k - 1 - v][None, :, None, None]
                dk[:, u, v] = (g * xp[:, :, u : u + h, v : v + w]).sum(axis=(0, 2, 3))
        return dx, dk

    return _result(out, "depthwise_conv2d", (x, kernels), backward)


def pointwise_conv2d(x, weight, bias=None) -> Tensor:
    """1x1 convolution mixing channels: [B,Cin,H,W] x [Cout,Cin] -> [B,Cout,H,W]."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.data.ndim != 4:
        raise DimensionError(f"pointwise_conv2d expects [B,C,H,W], got {x.data.shape}")
    if weight.data.ndim != 2 or weight.data.shape[1] != x.data.shape[1]:
        raise DimensionError(f"weight {weight.data.shape} incompatible with input channels {x.data.shape[1]}")
    b, cin, h, w = x.data.shape
    cout = weight.data.shape[0]
    out = np.einsum("oi,bihw->bohw", weight.data, x.data)
    _flops.record("pointwise_conv2d", 2 * b * h * w * cout * cin)
    if bias is not None:
        bias = as_tensor(bias)
        if bias.data.shape != (cout,):
            raise DimensionError(f"bias shape {bias.data.shape} != ({cout},)")
        out = out + bias.data[None, :, None, None]

    parents = [x, weight] + ([bias] if bias is not None else [])

    def backward(g):
        dx = np.einsum("oi,bohw->bihw", weight.data, g)
        dw = np.einsum("bohw,bihw->oi", g, x.data)
        if bias is not None:
            return dx, dw, g.sum(axis=(0, 2, 3))
        return dx, dw

    return _result(out, "pointwise_conv2d", parents, backward)


# ---------------------------------------------------------------------------
# shape plumbing
# ---------------------------------------------------------------------------

def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    shape = tuple(int(s) for s in shape)
    try:
        data = x.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(f"cannot reshape {x.data.shape} to {shape}: {exc}") from None

    def backward(g):
        return (g.reshape(x.data.shape),)

    return _result(data, "reshape", (x,), backward)


def transpose(x, axes) -> Tensor:
    x = as_tensor(x)
    axes = tuple(int(a) for a in axes)
    if sorted(axes) != list(range(x.data.ndim)):
        raise DimensionError(f"transpose axes {axes} invalid for rank {x.data.ndim}")
    inverse = tuple(np.argsort(axes))

    def backward(g):
        return (np.transpose(g, inverse),)

    return _result(np.transpose(x.data, axes), "transpose", (x,), backward)


def concat(tensors: Sequence, axis: int) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise DimensionError("concat of zero tensors")
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.ascontiguousarray(piece) for piece in np.split(g, offsets, axis=axis))

    return _result(data, "concat", tuple(tensors), backward)


def narrow(x, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice [start, start+length) along one axis.

    length may be zero; the result then has a zero extent on that axis.
    """
    x = as_tensor(x)
    axis = int(axis)
    extent = x.data.shape[axis]
    if start < 0 or length < 0 or start + length > extent:
        raise DimensionError(f"narrow [{start}:{start + length}] out of range for extent {extent} on axis {axis}")
    index = [slice(None)] * x.data.ndim
    index[axis] = slice(start, start + length)
    index = tuple(index)

    def backward(g):
        dx = np.zeros_like(x.data)
        dx[index] = g
        return (dx,)

    return _result(x.data[index], "narrow", (x,), backward)


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------

def sum_(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    data = x.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g.reshape(()), x.data.shape).copy(),)
        g2 = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(g2, x.data.shape).copy(),)

    return _result(np.asarray(data), "sum", (x,), backward)


def mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    if axis is None:
        n = x.data.size
    else:
        n = x.data.shape[axis] if isinstance(axis, int) else int(np.prod([x.data.shape[a] for a in axis]))
    return scale(sum_(x, axis=axis, keepdims=keepdims), 1.0 / n)


# ---------------------------------------------------------------------------
# gathers (embeddings, bias tables)
# ---------------------------------------------------------------------------

def gather_rows(table, index) -> Tensor:
    """table[index] along axis 0; index is a 1-D int array."""
    table = as_tensor(table)
    idx = np.asarray(index, dtype=np.int64)
    if idx.ndim != 1:
        raise DimensionError(f"gather_rows expects a 1-D index, got shape {idx.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= table.data.shape[0]):
        raise DimensionError(f"gather_rows index out of range for {table.data.shape[0]} rows")
    data = table.data[idx]

    def backward(g):
        dt = np.zeros_like(table.data)
        np.add.at(dt, idx, g)
        return (dt,)

    return _result(data, "gather_rows", (table,), backward)


def gather_last(table, index) -> Tensor:
    """table[:, index] for a 2-D table and 1-D int index -> [rows, len(index)]."""
    table = as_tensor(table)
    if table.data.ndim != 2:
        raise DimensionError(f"gather_last expects a 2-D table, got {table.data.shape}")
    idx = np.asarray(index, dtype=np.int64)
    if idx.ndim != 1:
        raise DimensionError(f"gather_last expects a 1-D index, got shape {idx.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= table.data.shape[1]):
        raise DimensionError(f"gather_last index out of range for {table.data.shape[1]} columns")
    data = table.data[:, idx]

    def backward(g):
        dt = np.zeros((table.data.shape[1], table.data.shape[0]), dtype=table.data.dtype)
        np.add.at(dt, idx, g.T)
        return (dt.T.copy(),)

    return _result(data, "gather_last", (table,), backward)


# ---------------------------------------------------------------------------
# operator sugar on Tensor
# ---------------------------------------------------------------------------

def _div(a, b):
    if isinstance(b, Tensor):
        raise NotImplementedError("tensor/tensor division is not part of this op set")
    return scale(a, 1.0 / float(b))


Tensor.__add__ = lambda self, other: add(self, other)
Tensor.__radd__ = lambda self, other: add(other, self)
Tensor.__sub__ = lambda self, other: sub(self, other)
Tensor.__rsub__ = lambda self, other: sub(other, self)
Tensor.__mul__ = lambda self, other: mul(self, other)
Tensor.__rmul__ = lambda self, other: mul(other, self)
Tensor.__neg__ = lambda self: neg(self)
Tensor.__truediv__ = _div
Tensor.__matmul__ = lambda self, other: matmul(self, other)
