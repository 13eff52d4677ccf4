"""Differentiable layers: exactly the set the fusion model needs.

Shapes follow the single-sample convention: images are [C, H, W], vectors
are [F]. Convolution is cross-correlation (no kernel flip). All math runs
in float64; forward uses an im2col buffer so the inner reduction is one
matrix product, and backward scatters through the same buffer layout.
"""

from __future__ import annotations

import numpy as np

from ..errors import ShapeError
from .tensor import Tensor, as_tensor, make_result


def _out_extent(size: int, k: int, stride: int, padding: int, what: str) -> int:
    span = size + 2 * padding - k
    if span < 0:
        raise ShapeError(f"{what}: window {k} exceeds padded extent {size + 2 * padding}")
    if span % stride != 0:
        raise ShapeError(
            f"{what}: (size + 2*padding - k) = {span} not divisible by stride {stride}")
    return span // stride + 1


def _check_conv_args(k: int, stride: int, padding: int) -> None:
    if k % 2 != 1:
        raise ShapeError(f"kernel size must be odd, got {k}")
    if stride < 1:
        raise ShapeError(f"stride must be >= 1, got {stride}")
    if padding < 0:
        raise ShapeError(f"padding must be >= 0, got {padding}")


def _im2col(xp: np.ndarray, k: int, stride: int, oh: int, ow: int) -> np.ndarray:
    """Stack k*k shifted views of the padded image: [C, k, k, oh, ow]."""
    c = xp.shape[0]
    cols = np.empty((c, k, k, oh, ow), dtype=np.float64)
    for ky in range(k):
        for kx in range(k):
            cols[:, ky, kx] = xp[:, ky:ky + stride * oh:stride, kx:kx + stride * ow:stride]
    return cols


def _col2im(dcols: np.ndarray, shape, k: int, stride: int, padding: int) -> np.ndarray:
    """Scatter-add the im2col gradient back onto the (unpadded) image."""
    c, h, w = shape
    oh, ow = dcols.shape[3], dcols.shape[4]
    dxp = np.zeros((c, h + 2 * padding, w + 2 * padding), dtype=np.float64)
    for ky in range(k):
        for kx in range(k):
            dxp[:, ky:ky + stride * oh:stride, kx:kx + stride * ow:stride] += dcols[:, ky, kx]
    if padding:
        return dxp[:, padding:-padding, padding:-padding]
    return dxp


def conv2d(x: Tensor, w: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlate [C_in, H, W] with [C_out, C_in, k, k] -> [C_out, H', W']."""
    if x.data.ndim != 3 or w.data.ndim != 4:
        raise ShapeError(f"conv2d expects 3-D input and 4-D weight, got {x.shape} and {w.shape}")
    c_out, wc_in, k, k2 = w.data.shape
    if k != k2:
        raise ShapeError(f"conv2d kernel must be square, got {w.shape}")
    _check_conv_args(k, stride, padding)
    c_in, h, wid = x.data.shape
    if wc_in != c_in:
        raise ShapeError(f"conv2d channel mismatch: input {x.shape} vs weight {w.shape}")
    oh = _out_extent(h, k, stride, padding, "conv2d rows")
    ow = _out_extent(wid, k, stride, padding, "conv2d cols")

    xp = np.pad(x.data, ((0, 0), (padding, padding), (padding, padding))) if padding else x.data
    cols = _im2col(xp, k, stride, oh, ow)
    flat = cols.reshape(c_in * k * k, oh * ow)
    w2 = w.data.reshape(c_out, c_in * k * k)
    out = (w2 @ flat).reshape(c_out, oh, ow)

    def bwd(g):
        gm = g.reshape(c_out, oh * ow)
        if w.requires_grad:
            w.ensure_grad()
            w.grad += (gm @ flat.T).reshape(w.data.shape)
        if x.requires_grad:
            dcols = (w2.T @ gm).reshape(c_in, k, k, oh, ow)
            x.ensure_grad()
            x.grad += _col2im(dcols, x.data.shape, k, stride, padding)

    return make_result(out, (x, w), bwd)


def depthwise_conv2d(x: Tensor, w: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Per-channel cross-correlation: [C, H, W] with [C, k, k] -> [C, H', W']."""
    if x.data.ndim != 3 or w.data.ndim != 3:
        raise ShapeError(
            f"depthwise_conv2d expects 3-D input and 3-D weight, got {x.shape} and {w.shape}")
    c, k, k2 = w.data.shape
    if k != k2:
        raise ShapeError(f"depthwise kernel must be square, got {w.shape}")
    _check_conv_args(k, stride, padding)
    if x.data.shape[0] != c:
        raise ShapeError(f"depthwise channel mismatch: input {x.shape} vs weight {w.shape}")
    h, wid = x.data.shape[1], x.data.shape[2]
    oh = _out_extent(h, k, stride, padding, "depthwise rows")
    ow = _out_extent(wid, k, stride, padding, "depthwise cols")

    xp = np.pad(x.data, ((0, 0), (padding, padding), (padding, padding))) if padding else x.data
    cols = _im2col(xp, k, stride, oh, ow)            # [C, k, k, oh, ow]
    flat = cols.reshape(c, k * k, oh * ow)
    wf = w.data.reshape(c, k * k)
    out = np.einsum("ckp,ck->cp", flat, wf).reshape(c, oh, ow)

    def bwd(g):
        gm = g.reshape(c, oh * ow)
        if w.requires_grad:
            w.ensure_grad()
            w.grad += np.einsum("ckp,cp->ck", flat, gm).reshape(w.data.shape)
        if x.requires_grad:
            dcols = (wf[:, :, None] * gm[:, None, :]).reshape(c, k, k, oh, ow)
            x.ensure_grad()
            x.grad += _col2im(dcols, x.data.shape, k, stride, padding)

    return make_result(out, (x, w), bwd)


def add_channel_bias(x: Tensor, b: Tensor) -> Tensor:
    """Add a per-channel bias to a [C, H, W] map."""
    if x.data.ndim != 3 or b.data.ndim != 1 or b.data.shape[0] != x.data.shape[0]:
        raise ShapeError(f"bias shape {b.shape} does not match map {x.shape}")
    out = x.data + b.data[:, None, None]

    def bwd(g):
        if x.requires_grad:
            x.ensure_grad()
            x.grad += g
        if b.requires_grad:
            b.ensure_grad()
            b.grad += g.sum(axis=(1, 2))

    return make_result(out, (x, b), bwd)


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Affine map [F] -> [G]: w @ x + b with w [G, F], b [G]."""
    if x.data.ndim != 1 or w.data.ndim != 2:
        raise ShapeError(f"linear expects 1-D input and 2-D weight, got {x.shape} and {w.shape}")
    g_dim, f_dim = w.data.shape
    if x.data.shape[0] != f_dim or b.data.shape != (g_dim,):
        raise ShapeError(
            f"linear shape mismatch: input {x.shape}, weight {w.shape}, bias {b.shape}")
    out = w.data @ x.data + b.data

    def bwd(g):
        if w.requires_grad:
            w.ensure_grad()
            w.grad += np.outer(g, x.data)
        if b.requires_grad:
            b.ensure_grad()
            b.grad += g
        if x.requires_grad:
            x.ensure_grad()
            x.grad += w.data.T @ g

    return make_result(out, (x, w, b), bwd)


def relu(x: Tensor) -> Tensor:
    """Elementwise max(0, x); subgradient 0 at the kink."""
    out = np.maximum(x.data, 0.0)

    def bwd(g):
        if x.requires_grad:
            x.ensure_grad()
            x.grad += g * (x.data > 0.0)

    return make_result(out, (x,), bwd)


def global_avg_pool(x: Tensor) -> Tensor:
    """Mean over the spatial extent of a [C, H, W] map -> [C]."""
    if x.data.ndim != 3:
        raise ShapeError(f"global_avg_pool expects [C, H, W], got {x.shape}")
    _, h, w = x.data.shape
    out = x.data.mean(axis=(1, 2))

    def bwd(g):
        if x.requires_grad:
            x.ensure_grad()
            x.grad += g[:, None, None] / (h * w)

    return make_result(out, (x,), bwd)


def concat(parts: list[Tensor]) -> Tensor:
    """Join 1-D tensors end to end, preserving order."""
    if len(parts) == 0:
        raise ShapeError("concat of an empty list")
    for p in parts:
        if p.data.ndim != 1:
            raise ShapeError(f"concat expects 1-D parts, got {p.shape}")
    out = np.concatenate([p.data for p in parts])
    offsets = np.cumsum([0] + [p.data.shape[0] for p in parts])

    def bwd(g):
        for i, p in enumerate(parts):
            if p.requires_grad:
                p.ensure_grad()
                p.grad += g[offsets[i]:offsets[i + 1]]

    return make_result(out, tuple(parts), bwd)


def mse_loss(pred: Tensor, target) -> Tensor:
    """Mean squared error between two equal-length 1-D tensors (scalar out)."""
    target = as_tensor(target)
    if pred.data.ndim != 1 or target.data.ndim != 1 or pred.data.shape != target.data.shape:
        raise ShapeError(f"mse_loss shape mismatch: {pred.shape} vs {target.data.shape}")
    n = pred.data.shape[0]
    if n == 0:
        raise ShapeError("mse_loss of empty vectors")
    diff = pred.data - target.data
    out = np.array((diff @ diff) / n)

    def bwd(g):
        scale = 2.0 * float(g) / n
        if pred.requires_grad:
            pred.ensure_grad()
            pred.grad += scale * diff
        if target.requires_grad:
            target.ensure_grad()
            target.grad -= scale * diff

    return make_result(out, (pred, target), bwd)


def scale_shift(x: Tensor, scale: float, shift: float) -> Tensor:
    """Fixed affine rescaling (non-trainable), used to map outputs to data units."""
    out = x.data * scale + shift

    def bwd(g):
        if x.requires_grad:
            x.ensure_grad()
            x.grad += g * scale

    return make_result(out, (x,), bwd)


# ---------------------------------------------------------------------------
# Batched variants: leading sample axis N, used by the training loop so one
# layer is one matrix product per minibatch instead of one per sample.  Same
# math as the single-sample ops above.


def _im2col_n(xp: np.ndarray, k: int, stride: int, oh: int, ow: int) -> np.ndarray:
    """[N, C, Hp, Wp] -> [N, C, k, k, oh, ow]."""
    n, c = xp.shape[:2]
    cols = np.empty((n, c, k, k, oh, ow), dtype=np.float64)
    for ky in range(k):
        for kx in range(k):
            cols[:, :, ky, kx] = xp[:, :, ky:ky + stride * oh:stride,
                                    kx:kx + stride * ow:stride]
    return cols


def _col2im_n(dcols: np.ndarray, shape, k: int, stride: int, padding: int) -> np.ndarray:
    n, c, h, w = shape
    oh, ow = dcols.shape[4], dcols.shape[5]
    dxp = np.zeros((n, c, h + 2 * padding, w + 2 * padding), dtype=np.float64)
    for ky in range(k):
        for kx in range(k):
            dxp[:, :, ky:ky + stride * oh:stride,
                kx:kx + stride * ow:stride] += dcols[:, :, ky, kx]
    if padding:
        return dxp[:, :, padding:-padding, padding:-padding]
    return dxp


def conv2d_batch(x: Tensor, w: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlate [N, C_in, H, W] with [C_out, C_in, k, k]."""
    x, w = as_tensor(x), as_tensor(w)
    if x.data.ndim != 4:
        raise ShapeError(f"conv2d_batch input must be [N,C,H,W], got {x.shape}")
    if w.data.ndim != 4:
        raise ShapeError(f"conv2d_batch weights must be [C_out,C_in,k,k], got {w.shape}")
    n, c_in, h, wd = x.data.shape
    c_out, c_w, k, k2 = w.data.shape
    if k != k2 or c_w != c_in:
        raise ShapeError(f"weights {w.shape} do not fit input {x.shape}")
    _check_conv_args(k, stride, padding)
    oh = _out_extent(h, k, stride, padding, "conv2d_batch rows")
    ow = _out_extent(wd, k, stride, padding, "conv2d_batch cols")
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    cols = _im2col_n(xp, k, stride, oh, ow)
    flat = cols.reshape(n, c_in * k * k, oh * ow)
    w2 = w.data.reshape(c_out, c_in * k * k)
    out = np.matmul(w2, flat).reshape(n, c_out, oh, ow)

    def bwd(g):
        gm = g.reshape(n, c_out, oh * ow)
        if w.requires_grad:
            w.ensure_grad()
            dw = np.tensordot(gm, flat, axes=([0, 2], [0, 2]))
            w.grad += dw.reshape(w.data.shape)
        if x.requires_grad:
            x.ensure_grad()
            dflat = np.matmul(w2.T, gm)
            dcols = dflat.reshape(n, c_in, k, k, oh, ow)
            x.grad += _col2im_n(dcols, x.data.shape, k, stride, padding)

    return make_result(out, (x, w), bwd)


def depthwise_conv2d_batch(x: Tensor, w: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Per-channel cross-correlation: [N, C, H, W] with [C, k, k]."""
    x, w = as_tensor(x), as_tensor(w)
    if x.data.ndim != 4:
        raise ShapeError(f"depthwise_conv2d_batch input must be [N,C,H,W], got {x.shape}")
    if w.data.ndim != 3 or w.data.shape[1] != w.data.shape[2]:
        raise ShapeError(f"depthwise weights must be [C,k,k], got {w.shape}")
    n, c, h, wd = x.data.shape
    if w.data.shape[0] != c:
        raise ShapeError(f"weights {w.shape} do not fit input {x.shape}")
    k = w.data.shape[1]
    _check_conv_args(k, stride, padding)
    oh = _out_extent(h, k, stride, padding, "depthwise rows")
    ow = _out_extent(wd, k, stride, padding, "depthwise cols")
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    cols = _im2col_n(xp, k, stride, oh, ow).reshape(n, c, k * k, oh * ow)
    wf = w.data.reshape(c, k * k)
    out = np.einsum("nckl,ck->ncl", cols, wf).reshape(n, c, oh, ow)

    def bwd(g):
        gm = g.reshape(n, c, oh * ow)
        if w.requires_grad:
            w.ensure_grad()
            w.grad += np.einsum("ncl,nckl->ck", gm, cols).reshape(w.data.shape)
        if x.requires_grad:
            x.ensure_grad()
            dcols = np.einsum("ncl,ck->nckl", gm, wf).reshape(n, c, k, k, oh, ow)
            x.grad += _col2im_n(dcols, x.data.shape, k, stride, padding)

    return make_result(out, (x, w), bwd)


def add_channel_bias_batch(x: Tensor, b: Tensor) -> Tensor:
    """[N, C, H, W] + per-channel bias [C]."""
    x, b = as_tensor(x), as_tensor(b)
    if x.data.ndim != 4 or b.data.ndim != 1 or b.data.shape[0] != x.data.shape[1]:
        raise ShapeError(f"bias {b.shape} does not fit input {x.shape}")
    out = x.data + b.data[None, :, None, None]

    def bwd(g):
        if x.requires_grad:
            x.ensure_grad()
            x.grad += g
        if b.requires_grad:
            b.ensure_grad()
            b.grad += g.sum(axis=(0, 2, 3))

    return make_result(out, (x, b), bwd)


def global_avg_pool_batch(x: Tensor) -> Tensor:
    """[N, C, H, W] -> [N, C]."""
    x = as_tensor(x)
    if x.data.ndim != 4:
        raise ShapeError(f"global_avg_pool_batch input must be [N,C,H,W], got {x.shape}")
    n, c, h, w = x.data.shape
    out = x.data.mean(axis=(2, 3))

    def bwd(g):
        if x.requires_grad:
            x.ensure_grad()
            x.grad += g[:, :, None, None] / (h * w)

    return make_result(out, (x,), bwd)


def linear_batch(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """[N, F] @ [G, F]^T + [G] -> [N, G]."""
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    if x.data.ndim != 2 or w.data.ndim != 2 or b.data.ndim != 1:
        raise ShapeError(f"linear_batch shapes: x {x.shape}, w {w.shape}, b {b.shape}")
    if w.data.shape[1] != x.data.shape[1] or b.data.shape[0] != w.data.shape[0]:
        raise ShapeError(f"linear_batch mismatch: x {x.shape}, w {w.shape}, b {b.shape}")
    out = x.data @ w.data.T + b.data

    def bwd(g):
        if w.requires_grad:
            w.ensure_grad()
            w.grad += g.T @ x.data
        if b.requires_grad:
            b.ensure_grad()
            b.grad += g.sum(axis=0)
        if x.requires_grad:
            x.ensure_grad()
            x.grad += g @ w.data

    return make_result(out, (x, w, b), bwd)


def concat_columns(parts: list[Tensor]) -> Tensor:
    """Concatenate [N, D_i] blocks along axis 1."""
    parts = [as_tensor(p) for p in parts]
    if not parts:
        raise ShapeError("concat_columns needs at least one part")
    n = parts[0].data.shape[0]
    for p in parts:
        if p.data.ndim != 2 or p.data.shape[0] != n:
            raise ShapeError(f"concat_columns parts must share N; got {[p.shape for p in parts]}")
    widths = [p.data.shape[1] for p in parts]
    offsets = np.concatenate([[0], np.cumsum(widths)])
    out = np.concatenate([p.data for p in parts], axis=1)

    def bwd(g):
        for p, a, z in zip(parts, offsets[:-1], offsets[1:]):
            if p.requires_grad:
                p.ensure_grad()
                p.grad += g[:, a:z]

    return make_result(out, tuple(parts), bwd)


def squeeze_column(x: Tensor) -> Tensor:
    """[N, 1] -> [N]."""
    x = as_tensor(x)
    if x.data.ndim != 2 or x.data.shape[1] != 1:
        raise ShapeError(f"squeeze_column input must be [N,1], got {x.shape}")
    out = x.data[:, 0].copy()

    def bwd(g):
        if x.requires_grad:
            x.ensure_grad()
            x.grad += g[:, None]

    return make_result(out, (x,), bwd)
