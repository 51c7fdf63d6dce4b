"""N-d convolution and transposed convolution (NCHW / NCDHW layouts).

Both work on any number of spatial axes so the 2D autoencoders and the 3D
cross-recursion network share one code path. Forward builds an im2col
matrix once and reuses it for the weight gradient; every contraction is a
single GEMM, and only the copy between columns and image runs once per
kernel offset.
"""
from __future__ import annotations

import itertools
from typing import Optional, Sequence, Union

import numpy as np

from .tensor import DimensionError, Tensor, as_tensor, make_node

IntOrSeq = Union[int, Sequence[int]]


def _tuple(v: IntOrSeq, n: int, what: str) -> tuple:
    if isinstance(v, (int, np.integer)):
        out = (int(v),) * n
    else:
        out = tuple(int(a) for a in v)
    if len(out) != n:
        raise DimensionError(f"{what} needs {n} entries, got {out}")
    return out


def _offset_slices(offset, stride, out_spatial):
    return tuple(slice(k, k + s * (o - 1) + 1, s) for k, s, o in zip(offset, stride, out_spatial))


def conv_nd(x: Tensor, w: Tensor, b: Optional[Tensor] = None,
            stride: IntOrSeq = 1, padding: IntOrSeq = 0) -> Tensor:
    x, w = as_tensor(x), as_tensor(w)
    nsp = x.ndim - 2
    if nsp < 1 or w.ndim != nsp + 2:
        raise DimensionError(f"input {x.shape} and kernel {w.shape} ranks disagree")
    if x.shape[1] != w.shape[1]:
        raise DimensionError(f"input has {x.shape[1]} channels, kernel expects {w.shape[1]}")
    stride = _tuple(stride, nsp, "stride")
    padding = _tuple(padding, nsp, "padding")
    if min(stride) < 1:
        raise DimensionError(f"stride must be >= 1, got {stride}")
    ksize = w.shape[2:]
    spatial = x.shape[2:]
    out_sp = tuple((n + 2 * p - k) // s + 1 for n, p, k, s in zip(spatial, padding, ksize, stride))
    if any(n + 2 * p < k for n, p, k in zip(spatial, padding, ksize)) or min(out_sp) < 1:
        raise DimensionError(f"kernel {ksize} does not fit input {spatial} with padding {padding}")

    pad_width = ((0, 0), (0, 0)) + tuple((p, p) for p in padding)
    xp = np.pad(x.data, pad_width) if any(padding) else x.data
    sp_axes = tuple(range(2, 2 + nsp))
    batch, cin, cout = x.shape[0], x.shape[1], w.shape[0]
    offsets = list(itertools.product(*(range(k) for k in ksize)))
    # channel-major im2col: rows (Cin, offset), columns (B, *out). Thin GEMMs
    # against this layout are several times faster than against a window view.
    cols = np.empty((cin, len(offsets), batch) + out_sp, dtype=x.data.dtype)
    for i, off in enumerate(offsets):
        cols[:, i] = np.moveaxis(xp[(slice(None), slice(None)) + _offset_slices(off, stride, out_sp)], 0, 1)
    cols = cols.reshape(cin * len(offsets), -1)
    wmat = w.data.reshape(cout, -1)
    out = np.moveaxis((wmat @ cols).reshape((cout, batch) + out_sp), 0, 1)
    if b is not None:
        b = as_tensor(b)
        if b.shape != (cout,):
            raise DimensionError(f"bias shape {b.shape} != ({cout},)")
        out = out + b.data.reshape((1, -1) + (1,) * nsp)
    out = np.ascontiguousarray(out, dtype=x.data.dtype)

    def backward(g):
        gx = gw = gb = None
        g2 = np.moveaxis(g, 0, 1).reshape(cout, -1)
        if x.requires_grad:
            dcols = (wmat.T @ g2).reshape((cin, len(offsets), batch) + out_sp)
            gxp = np.zeros(xp.shape, dtype=g.dtype)
            for i, off in enumerate(offsets):
                gxp[(slice(None), slice(None)) + _offset_slices(off, stride, out_sp)] += np.moveaxis(dcols[:, i], 0, 1)
            crop = (slice(None), slice(None)) + tuple(slice(p, p + n) for p, n in zip(padding, spatial))
            gx = gxp[crop]
        if w.requires_grad:
            gw = (g2 @ cols.T).reshape(w.shape).astype(w.data.dtype, copy=False)
        if b is not None and b.requires_grad:
            gb = g.sum(axis=(0,) + sp_axes)
        return gx, gw, gb

    parents = (x, w) + ((b,) if b is not None else ())
    return make_node(out, parents, backward)


def conv_transpose_nd(x: Tensor, w: Tensor, b: Optional[Tensor] = None,
                      stride: IntOrSeq = 1) -> Tensor:
    """Adjoint of ``conv_nd`` (no padding); kernel layout is Cin x Cout x k..."""
    x, w = as_tensor(x), as_tensor(w)
    nsp = x.ndim - 2
    if nsp < 1 or w.ndim != nsp + 2:
        raise DimensionError(f"input {x.shape} and kernel {w.shape} ranks disagree")
    if x.shape[1] != w.shape[0]:
        raise DimensionError(f"input has {x.shape[1]} channels, kernel expects {w.shape[0]}")
    stride = _tuple(stride, nsp, "stride")
    if min(stride) < 1:
        raise DimensionError(f"stride must be >= 1, got {stride}")
    ksize = w.shape[2:]
    spatial = x.shape[2:]
    out_sp = tuple((n - 1) * s + k for n, s, k in zip(spatial, stride, ksize))
    cout = w.shape[1]
    batch, cin = x.shape[0], x.shape[1]
    offsets = list(itertools.product(*(range(k) for k in ksize)))
    wmat = w.data.reshape(cin, -1)  # Cin x (Cout, *k)
    rows = np.moveaxis(x.data, 1, -1).reshape(-1, cin)
    contrib = (rows @ wmat).reshape((batch,) + spatial + tuple(w.shape[1:]))
    out = np.zeros((batch, cout) + out_sp, dtype=x.data.dtype)
    for off in offsets:
        out[(slice(None), slice(None)) + _offset_slices(off, stride, spatial)] += np.moveaxis(
            contrib[(Ellipsis, slice(None)) + off], -1, 1)
    if b is not None:
        b = as_tensor(b)
        if b.shape != (cout,):
            raise DimensionError(f"bias shape {b.shape} != ({cout},)")
        out += b.data.reshape((1, -1) + (1,) * nsp)
    sp_axes = tuple(range(2, 2 + nsp))

    def backward(g):
        gx = gw = gb = None
        # gather every offset's slice of g into B, *in, Cout, *k, then one GEMM each way
        gcols = np.empty((batch,) + spatial + tuple(w.shape[1:]), dtype=g.dtype)
        for off in offsets:
            gcols[(Ellipsis, slice(None)) + off] = np.moveaxis(
                g[(slice(None), slice(None)) + _offset_slices(off, stride, spatial)], 1, -1)
        gcols = gcols.reshape(rows.shape[0], -1)
        if x.requires_grad:
            gx = np.moveaxis((gcols @ wmat.T).reshape((batch,) + spatial + (cin,)), -1, 1)
            gx = np.ascontiguousarray(gx, dtype=g.dtype)
        if w.requires_grad:
            gw = (rows.T @ gcols).reshape(w.shape).astype(w.data.dtype, copy=False)
        if b is not None and b.requires_grad:
            gb = g.sum(axis=(0,) + sp_axes)
        return gx, gw, gb

    parents = (x, w) + ((b,) if b is not None else ())
    return make_node(out, parents, backward)


def conv2d(x, w, b=None, stride: IntOrSeq = 1, padding: IntOrSeq = 0) -> Tensor:
    if as_tensor(x).ndim != 4:
        raise DimensionError(f"conv2d expects B x C x H x W, got {as_tensor(x).shape}")
    return conv_nd(x, w, b, stride, padding)


def conv3d(x, w, b=None, stride: IntOrSeq = 1, padding: IntOrSeq = 0) -> Tensor:
    if as_tensor(x).ndim != 5:
        raise DimensionError(f"conv3d expects B x C x D x H x W, got {as_tensor(x).shape}")
    return conv_nd(x, w, b, stride, padding)


def conv_transpose2d(x, w, b=None, stride: IntOrSeq = 1) -> Tensor:
    if as_tensor(x).ndim != 4:
        raise DimensionError(f"conv_transpose2d expects B x C x H x W, got {as_tensor(x).shape}")
    return conv_transpose_nd(x, w, b, stride)


def conv_transpose3d(x, w, b=None, stride: IntOrSeq = 1) -> Tensor:
    if as_tensor(x).ndim != 5:
        raise DimensionError(f"conv_transpose3d expects B x C x D x H x W, got {as_tensor(x).shape}")
    return conv_transpose_nd(x, w, b, stride)
