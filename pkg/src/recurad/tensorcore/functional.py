"""Differentiable elementwise ops, reductions, losses and the gradient-map op."""
from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from .tensor import DimensionError, Tensor, as_tensor, make_node


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def _binary_shapes(a: Tensor, b: Tensor, strict: bool) -> None:
    if strict and a.shape != b.shape:
        raise DimensionError(f"shape mismatch: {a.shape} vs {b.shape}")
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise DimensionError(f"shape mismatch: {a.shape} vs {b.shape}") from exc


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _binary_shapes(a, b, strict=False)
    return make_node(a.data + b.data, (a, b),
                     lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _binary_shapes(a, b, strict=False)
    return make_node(a.data - b.data, (a, b),
                     lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _binary_shapes(a, b, strict=False)
    return make_node(a.data * b.data, (a, b),
                     lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def leaky_relu(x, slope: float = 0.01) -> Tensor:
    x = as_tensor(x)
    pos = x.data > 0
    out = np.where(pos, x.data, x.data * slope).astype(x.data.dtype, copy=False)
    return make_node(out, (x,), lambda g: (np.where(pos, g, g * slope),))


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    # split by sign so exp never overflows
    z = np.exp(-np.abs(x.data))
    out = np.where(x.data >= 0, 1.0 / (1.0 + z), z / (1.0 + z)).astype(x.data.dtype, copy=False)
    return make_node(out, (x,), lambda g: (g * out * (1.0 - out),))


def abs_(x) -> Tensor:
    x = as_tensor(x)
    return make_node(np.abs(x.data), (x,), lambda g: (g * np.sign(x.data),))


def square(x) -> Tensor:
    x = as_tensor(x)
    return make_node(x.data * x.data, (x,), lambda g: (2.0 * g * x.data,))


def clip(x, lo: float, hi: float) -> Tensor:
    """Clamp; gradient passes only where the value was inside [lo, hi]."""
    x = as_tensor(x)
    inside = (x.data >= lo) & (x.data <= hi)
    return make_node(np.clip(x.data, lo, hi), (x,), lambda g: (np.where(inside, g, 0.0).astype(g.dtype),))


def sum_(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    out = np.asarray(x.data.sum(axis=axis, keepdims=keepdims))

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).astype(x.data.dtype),)

    return make_node(out, (x,), backward)


def mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    if axis is None:
        n = x.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        n = int(np.prod([x.shape[a] for a in axes]))
    return mul(sum_(x, axis=axis, keepdims=keepdims), 1.0 / n)


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    return make_node(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def concat(tensors: Sequence, axis: int = 1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    if not ts:
        raise DimensionError("concat of zero tensors")
    ref = ts[0].shape
    ax = axis % len(ref)
    for t in ts[1:]:
        if len(t.shape) != len(ref) or any(a != b for i, (a, b) in enumerate(zip(t.shape, ref)) if i != ax):
            raise DimensionError(f"concat shapes disagree off axis {axis}: {ref} vs {t.shape}")
    out = np.concatenate([t.data for t in ts], axis=ax)
    bounds = np.cumsum([0] + [t.shape[ax] for t in ts])

    def backward(g):
        return tuple(np.take(g, np.arange(lo, hi), axis=ax) for lo, hi in zip(bounds[:-1], bounds[1:]))

    return make_node(out, ts, backward)


def stack(tensors: Sequence, axis: int = 2) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    if not ts:
        raise DimensionError("stack of zero tensors")
    for t in ts[1:]:
        if t.shape != ts[0].shape:
            raise DimensionError(f"stack needs equal shapes: {ts[0].shape} vs {t.shape}")
    out = np.stack([t.data for t in ts], axis=axis)
    ax = axis % out.ndim
    return make_node(out, ts, lambda g: tuple(np.take(g, i, axis=ax) for i in range(len(ts))))


def take(x, index, axis: int) -> Tensor:
    """Select entries ``index`` (a list) along ``axis``."""
    x = as_tensor(x)
    idx = np.asarray(index, dtype=np.intp)
    ax = axis % x.ndim

    def backward(g):
        gx = np.zeros(x.shape, dtype=g.dtype)
        np.add.at(gx, (slice(None),) * ax + (idx,), g)
        return (gx,)

    return make_node(np.take(x.data, idx, axis=ax), (x,), backward)


def upsample_nearest(x, factor: int) -> Tensor:
    """Nearest-neighbour upsampling of the last two axes by an integer factor."""
    x = as_tensor(x)
    if factor == 1:
        return x
    out = x.data.repeat(factor, axis=-2).repeat(factor, axis=-1)

    def backward(g):
        s = g.shape
        g = g.reshape(s[:-2] + (s[-2] // factor, factor, s[-1] // factor, factor))
        return (g.sum(axis=(-3, -1)),)

    return make_node(out, (x,), backward)


def l1_loss(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _binary_shapes(a, b, strict=True)
    return mean(abs_(sub(a, b)))


def l2_loss(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _binary_shapes(a, b, strict=True)
    return mean(square(sub(a, b)))


def _forward_diffs(a: np.ndarray):
    dx = np.zeros_like(a)
    dy = np.zeros_like(a)
    dx[..., :, :-1] = a[..., :, 1:] - a[..., :, :-1]
    dy[..., :-1, :] = a[..., 1:, :] - a[..., :-1, :]
    return dx, dy


def spatial_gradient(x) -> Tensor:
    """Per-channel gradient magnitude from forward differences.

    The last row/column is replicated, so its outward difference is zero.
    Where the magnitude is exactly zero the subgradient 0 is used.
    """
    x = as_tensor(x)
    if x.ndim < 2 or x.shape[-1] < 2 or x.shape[-2] < 2:
        raise DimensionError(f"spatial_gradient needs H, W >= 2, got {x.shape}")
    dx, dy = _forward_diffs(x.data)
    mag = np.sqrt(dx * dx + dy * dy)

    def backward(g):
        safe = np.where(mag > 0, mag, 1.0)
        scale = np.where(mag > 0, g / safe, 0.0)
        ux, uy = scale * dx, scale * dy
        gx = np.zeros_like(x.data, dtype=g.dtype)
        # adjoint of the forward-difference operators
        gx[..., :, 1:] += ux[..., :, :-1]
        gx[..., :, :-1] -= ux[..., :, :-1]
        gx[..., 1:, :] += uy[..., :-1, :]
        gx[..., :-1, :] -= uy[..., :-1, :]
        return (gx,)

    return make_node(mag.astype(x.data.dtype, copy=False), (x,), backward)
