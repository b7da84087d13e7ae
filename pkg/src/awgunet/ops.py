"""Differentiable tensor operations.

Every public function takes and returns :class:`~awgunet.autodiff.Tensor`
values, never mutates its inputs, and registers an analytical backward
pass on the active gradient tape.  Each backward implementation is
verified against central finite differences in the test suite.

Convolutions run as a loop over kernel offsets with one GEMM-sized
``tensordot`` per offset.  At the kernel sizes used here (k <= 7) this is
within a small factor of an im2col matmul while keeping the backward pass
memory-light and exactly symmetric with the forward pass.
"""

from __future__ import annotations

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .autodiff import Tensor, record_op, recording
from .exceptions import ShapeError

__all__ = [
    "conv2d",
    "depthwise_conv2d",
    "separable_conv2d",
    "transposed_conv2d",
    "dense",
    "instance_norm",
    "relu",
    "leaky_relu",
    "sigmoid",
    "concat_channels",
    "add",
    "scale",
    "mul_elementwise",
    "mul_per_channel",
    "avg_pool2d",
    "max_pool2d",
    "spatial_mean",
    "nearest_upsample2x",
    "sum_all",
]


def _require_rank(x: Tensor, rank: int, op: str, role: str) -> None:
    if x.ndim != rank:
        raise ShapeError(f"{op}: {role} must be rank {rank}, got shape {x.shape}")


def _same_pad(size: int, k: int, stride: int) -> tuple[int, int]:
    """Zero-padding (before, after) so output size is ceil(size/stride)."""
    out = -(-size // stride)
    total = max((out - 1) * stride + k - size, 0)
    before = total // 2
    return before, total - before


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None,
           stride: int = 1, padding: str = "same") -> Tensor:
    """2-D cross-correlation over (batch, channel, rows, cols) tensors.

    ``weight`` has shape (c_out, c_in, kh, kw); ``bias``, when given, is a
    length-c_out vector.  ``padding`` is "same" (zero padding, output
    spatial size ceil(input/stride)) or "valid" (no padding).
    """
    _require_rank(x, 4, "conv2d", "input")
    _require_rank(weight, 4, "conv2d", "weight")
    n, c_in, h, w = x.shape
    c_out, wc_in, kh, kw = weight.shape
    if wc_in != c_in:
        raise ShapeError(
            f"conv2d: input has {c_in} channels but weight expects {wc_in}")
    if bias is not None and bias.shape != (c_out,):
        raise ShapeError(
            f"conv2d: bias shape {bias.shape} != ({c_out},)")
    if padding not in ("same", "valid"):
        raise ShapeError(f"conv2d: padding must be 'same' or 'valid', got {padding!r}")
    if stride < 1:
        raise ShapeError(f"conv2d: stride must be >= 1, got {stride}")

    if padding == "same":
        (pt, pb), (pl, pr) = _same_pad(h, kh, stride), _same_pad(w, kw, stride)
    else:
        pt = pb = pl = pr = 0
    xp = np.pad(x.data, ((0, 0), (0, 0), (pt, pb), (pl, pr))) \
        if (pt or pb or pl or pr) else x.data
    hp, wp = xp.shape[2], xp.shape[3]
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1
    if ho < 1 or wo < 1:
        raise ShapeError(
            f"conv2d: kernel ({kh}x{kw}) larger than padded input ({hp}x{wp})")

    windows = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    out_data = np.tensordot(windows, weight.data, axes=([1, 4, 5], [1, 2, 3]))
    out_data = np.ascontiguousarray(out_data.transpose(0, 3, 1, 2))
    if bias is not None:
        out_data += bias.data[None, :, None, None]
    out = Tensor(out_data)

    if recording(x, weight, bias):
        def backward(g):
            gw = np.zeros_like(weight.data)
            gx_pad = np.zeros_like(xp) if x.requires_grad else None
            for ki in range(kh):
                for kj in range(kw):
                    rows = slice(ki, ki + (ho - 1) * stride + 1, stride)
                    cols = slice(kj, kj + (wo - 1) * stride + 1, stride)
                    xs = xp[:, :, rows, cols]
                    gw[:, :, ki, kj] = np.tensordot(g, xs, axes=([0, 2, 3], [0, 2, 3]))
                    if gx_pad is not None:
                        gi = np.tensordot(g, weight.data[:, :, ki, kj], axes=([1], [0]))
                        gx_pad[:, :, rows, cols] += gi.transpose(0, 3, 1, 2)
            gx = None
            if gx_pad is not None:
                gx = gx_pad[:, :, pt:pt + h, pl:pl + w]
            gb = g.sum(axis=(0, 2, 3)) if bias is not None else None
            return (gx, gw, gb) if bias is not None else (gx, gw)
        parents = (x, weight, bias) if bias is not None else (x, weight)
        record_op(out, parents, backward)
    return out


def depthwise_conv2d(x: Tensor, weight: Tensor, pad_mode: str = "zeros") -> Tensor:
    """Per-channel stride-1 same-padded convolution.

    ``weight`` has shape (c, 1, kh, kw); channel c of the input is
    convolved with kernel c alone.  This is the first stage of a separable
    convolution and also applies the fixed anti-aliasing kernels, whose
    weight tensor simply has ``requires_grad=False``.

    ``pad_mode`` is "zeros" (the convention for learned convolutions) or
    "edge" (replicate border samples, so unit-sum kernels preserve
    constant inputs exactly; used by the fixed upsamplers).
    """
    _require_rank(x, 4, "depthwise_conv2d", "input")
    _require_rank(weight, 4, "depthwise_conv2d", "weight")
    if pad_mode not in ("zeros", "edge"):
        raise ShapeError(f"depthwise_conv2d: unknown pad_mode {pad_mode!r}")
    n, c, h, w = x.shape
    wc, one, kh, kw = weight.shape
    if wc != c or one != 1:
        raise ShapeError(
            f"depthwise_conv2d: weight shape {weight.shape} incompatible with "
            f"{c}-channel input (want ({c}, 1, kh, kw))")

    (pt, pb), (pl, pr) = _same_pad(h, kh, 1), _same_pad(w, kw, 1)
    pad_spec = ((0, 0), (0, 0), (pt, pb), (pl, pr))
    xp = np.pad(x.data, pad_spec,
                mode="constant" if pad_mode == "zeros" else "edge")
    out_data = np.zeros_like(x.data)
    wd = weight.data
    for ki in range(kh):
        for kj in range(kw):
            out_data += xp[:, :, ki:ki + h, kj:kj + w] * wd[None, :, 0, ki, kj, None, None]
    out = Tensor(out_data)

    if recording(x, weight):
        def backward(g):
            gw = np.zeros_like(wd) if weight.requires_grad else None
            gx_pad = np.zeros_like(xp) if x.requires_grad else None
            for ki in range(kh):
                for kj in range(kw):
                    xs = xp[:, :, ki:ki + h, kj:kj + w]
                    if gw is not None:
                        gw[:, 0, ki, kj] = np.einsum("nchw,nchw->c", g, xs)
                    if gx_pad is not None:
                        gx_pad[:, :, ki:ki + h, kj:kj + w] += \
                            g * wd[None, :, 0, ki, kj, None, None]
            gx = None
            if gx_pad is not None:
                if pad_mode == "edge":
                    # Replicated cells are copies of the border samples, so
                    # their gradients fold back onto those samples: rows
                    # first, then columns (corner pads land correctly).
                    if pt:
                        gx_pad[:, :, pt] += gx_pad[:, :, :pt].sum(axis=2)
                    if pb:
                        gx_pad[:, :, pt + h - 1] += gx_pad[:, :, pt + h:].sum(axis=2)
                    if pl:
                        gx_pad[:, :, :, pl] += gx_pad[:, :, :, :pl].sum(axis=3)
                    if pr:
                        gx_pad[:, :, :, pl + w - 1] += \
                            gx_pad[:, :, :, pl + w:].sum(axis=3)
                gx = gx_pad[:, :, pt:pt + h, pl:pl + w]
            return gx, gw
        record_op(out, (x, weight), backward)
    return out


def separable_conv2d(x: Tensor, depthwise: Tensor, pointwise: Tensor,
                     bias: Tensor | None = None) -> Tensor:
    """Depthwise convolution followed by a 1x1 pointwise convolution.

    ``depthwise`` is (c_in, 1, k, k), ``pointwise`` is (c_out, c_in, 1, 1);
    the bias, when given, applies after the pointwise stage.
    """
    _require_rank(pointwise, 4, "separable_conv2d", "pointwise weight")
    if pointwise.shape[2:] != (1, 1):
        raise ShapeError(
            f"separable_conv2d: pointwise kernel must be 1x1, got {pointwise.shape}")
    mid = depthwise_conv2d(x, depthwise)
    if pointwise.shape[1] != mid.shape[1]:
        raise ShapeError(
            f"separable_conv2d: depthwise outputs {mid.shape[1]} channels but "
            f"pointwise expects {pointwise.shape[1]}")
    return conv2d(mid, pointwise, bias, stride=1, padding="same")


def transposed_conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None,
                      stride: int = 2) -> Tensor:
    """Transposed convolution (fractionally-strided upsampling).

    ``weight`` has shape (c_in, c_out, kh, kw).  Output spatial size is
    ``(s - 1) * stride + k`` per dimension: stride 2 with k = 2 doubles the
    spatial dims exactly, stride 1 with k = 1 is a pure channel remap.
    """
    _require_rank(x, 4, "transposed_conv2d", "input")
    _require_rank(weight, 4, "transposed_conv2d", "weight")
    if stride not in (1, 2):
        raise ShapeError(f"transposed_conv2d: unsupported stride {stride} (use 1 or 2)")
    n, c_in, h, w = x.shape
    wc_in, c_out, kh, kw = weight.shape
    if wc_in != c_in:
        raise ShapeError(
            f"transposed_conv2d: input has {c_in} channels but weight expects {wc_in}")
    if bias is not None and bias.shape != (c_out,):
        raise ShapeError(f"transposed_conv2d: bias shape {bias.shape} != ({c_out},)")

    ho = (h - 1) * stride + kh
    wo = (w - 1) * stride + kw
    out_data = np.zeros((n, c_out, ho, wo), dtype=x.dtype)
    for ki in range(kh):
        for kj in range(kw):
            rows = slice(ki, ki + (h - 1) * stride + 1, stride)
            cols = slice(kj, kj + (w - 1) * stride + 1, stride)
            contrib = np.tensordot(x.data, weight.data[:, :, ki, kj], axes=([1], [0]))
            out_data[:, :, rows, cols] += contrib.transpose(0, 3, 1, 2)
    if bias is not None:
        out_data += bias.data[None, :, None, None]
    out = Tensor(out_data)

    if recording(x, weight, bias):
        def backward(g):
            gx = np.zeros_like(x.data) if x.requires_grad else None
            gw = np.zeros_like(weight.data)
            for ki in range(kh):
                for kj in range(kw):
                    rows = slice(ki, ki + (h - 1) * stride + 1, stride)
                    cols = slice(kj, kj + (w - 1) * stride + 1, stride)
                    gs = g[:, :, rows, cols]
                    gw[:, :, ki, kj] = np.tensordot(
                        x.data, gs, axes=([0, 2, 3], [0, 2, 3]))
                    if gx is not None:
                        gi = np.tensordot(gs, weight.data[:, :, ki, kj], axes=([1], [1]))
                        gx += gi.transpose(0, 3, 1, 2)
            gb = g.sum(axis=(0, 2, 3)) if bias is not None else None
            return (gx, gw, gb) if bias is not None else (gx, gw)
        parents = (x, weight, bias) if bias is not None else (x, weight)
        record_op(out, parents, backward)
    return out


def dense(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Affine map ``x @ weight.T + bias`` on (batch, features) tensors."""
    _require_rank(x, 2, "dense", "input")
    _require_rank(weight, 2, "dense", "weight")
    d_out, d_in = weight.shape
    if x.shape[1] != d_in:
        raise ShapeError(
            f"dense: input has {x.shape[1]} features but weight expects {d_in}")
    if bias is not None and bias.shape != (d_out,):
        raise ShapeError(f"dense: bias shape {bias.shape} != ({d_out},)")
    out_data = x.data @ weight.data.T
    if bias is not None:
        out_data = out_data + bias.data[None, :]
    out = Tensor(out_data)

    if recording(x, weight, bias):
        def backward(g):
            gx = g @ weight.data if x.requires_grad else None
            gw = g.T @ x.data
            gb = g.sum(axis=0) if bias is not None else None
            return (gx, gw, gb) if bias is not None else (gx, gw)
        parents = (x, weight, bias) if bias is not None else (x, weight)
        record_op(out, parents, backward)
    return out


def instance_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-sample, per-channel normalization over the spatial dims.

    Each (sample, channel) plane is standardized to zero mean and unit
    variance (population variance, stabilized by ``eps``), then scaled by
    ``gamma`` and shifted by ``beta`` (both length-c vectors).
    """
    _require_rank(x, 4, "instance_norm", "input")
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(
            f"instance_norm: gamma/beta must have shape ({c},), got "
            f"{gamma.shape} and {beta.shape}")
    if eps <= 0:
        raise ValueError(f"instance_norm: eps must be > 0, got {eps}")
    mu = x.data.mean(axis=(2, 3), keepdims=True)
    xc = x.data - mu
    var = np.mean(xc * xc, axis=(2, 3), keepdims=True)
    inv_std = 1.0 / np.sqrt(var + np.asarray(eps, dtype=x.dtype))
    xhat = xc * inv_std
    out = Tensor(gamma.data[None, :, None, None] * xhat + beta.data[None, :, None, None])

    if recording(x, gamma, beta):
        def backward(g):
            ggamma = np.einsum("nchw,nchw->c", g, xhat)
            gbeta = g.sum(axis=(0, 2, 3))
            gx = None
            if x.requires_grad:
                gh = g * gamma.data[None, :, None, None]
                gx = inv_std * (
                    gh
                    - gh.mean(axis=(2, 3), keepdims=True)
                    - xhat * np.mean(gh * xhat, axis=(2, 3), keepdims=True)
                )
            return gx, ggamma, gbeta
        record_op(out, (x, gamma, beta), backward)
    return out


def relu(x: Tensor) -> Tensor:
    """Elementwise max(x, 0)."""
    out = Tensor(np.maximum(x.data, 0))
    if recording(x):
        mask = x.data > 0
        record_op(out, (x,), lambda g: (g * mask,))
    return out


def leaky_relu(x: Tensor, slope: float = 0.01) -> Tensor:
    """ReLU with a small negative-side slope.

    Used where a plain ReLU over a very narrow layer could leave every
    unit inactive at initialization and permanently cut gradient flow.
    """
    s = x.dtype.type(slope)
    out = Tensor(np.where(x.data > 0, x.data, x.data * s))
    if recording(x):
        factor = np.where(x.data > 0, x.dtype.type(1.0), s)
        record_op(out, (x,), lambda g: (g * factor,))
    return out


def sigmoid(x: Tensor) -> Tensor:
    """Numerically stable logistic function, clamped into the open (0, 1).

    Float rounding would otherwise return exactly 0.0 or 1.0 for large
    |x|; the clamp keeps the documented open-interval range while leaving
    the gradient formula s*(1-s) untouched.
    """
    xd = x.data
    out_data = np.empty_like(xd)
    pos = xd >= 0
    out_data[pos] = 1.0 / (1.0 + np.exp(-xd[pos]))
    ex = np.exp(xd[~pos])
    out_data[~pos] = ex / (1.0 + ex)
    lo = np.finfo(xd.dtype).tiny
    hi = np.nextafter(xd.dtype.type(1.0), xd.dtype.type(0.0))
    np.clip(out_data, lo, hi, out=out_data)
    out = Tensor(out_data)
    if recording(x):
        record_op(out, (x,), lambda g: (g * out_data * (1.0 - out_data),))
    return out


def concat_channels(xs) -> Tensor:
    """Concatenate rank-4 tensors along the channel axis."""
    xs = list(xs)
    if not xs:
        raise ShapeError("concat_channels: need at least one tensor")
    for t in xs:
        _require_rank(t, 4, "concat_channels", "input")
    ref = xs[0].shape
    for t in xs[1:]:
        if (t.shape[0], t.shape[2], t.shape[3]) != (ref[0], ref[2], ref[3]):
            raise ShapeError(
                f"concat_channels: batch/spatial dims differ: {ref} vs {t.shape}")
    out = Tensor(np.concatenate([t.data for t in xs], axis=1))

    if recording(*xs):
        sizes = [t.shape[1] for t in xs]
        offsets = np.cumsum([0] + sizes)

        def backward(g):
            return tuple(g[:, offsets[i]:offsets[i + 1]] for i in range(len(sizes)))
        record_op(out, tuple(xs), backward)
    return out


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum of two same-shape tensors."""
    if a.shape != b.shape:
        raise ShapeError(f"add: shapes differ: {a.shape} vs {b.shape}")
    out = Tensor(a.data + b.data)
    if recording(a, b):
        record_op(out, (a, b), lambda g: (g, g))
    return out


def scale(x: Tensor, s: float) -> Tensor:
    """Multiply a tensor by a python scalar."""
    s = float(s)
    out = Tensor(x.data * x.dtype.type(s))
    if recording(x):
        record_op(out, (x,), lambda g: (g * x.dtype.type(s),))
    return out


def mul_elementwise(a: Tensor, b: Tensor) -> Tensor:
    """Hadamard product of two same-shape tensors."""
    if a.shape != b.shape:
        raise ShapeError(f"mul_elementwise: shapes differ: {a.shape} vs {b.shape}")
    out = Tensor(a.data * b.data)
    if recording(a, b):
        record_op(out, (a, b), lambda g: (g * b.data, g * a.data))
    return out


def mul_per_channel(x: Tensor, w: Tensor) -> Tensor:
    """Scale each channel of ``x`` by a weight.

    ``x`` is rank 4 (n, c, h, w) or rank 2 (n, c).  ``w`` is either a
    shared length-c vector or a per-sample (n, c) tensor; it broadcasts
    over the spatial dims.  This realizes both channel-attention gating
    and the learnable per-channel pooling weights.
    """
    if x.ndim not in (2, 4):
        raise ShapeError(f"mul_per_channel: input must be rank 2 or 4, got {x.shape}")
    n, c = x.shape[0], x.shape[1]
    if w.ndim == 1:
        if w.shape != (c,):
            raise ShapeError(f"mul_per_channel: weight shape {w.shape} != ({c},)")
        wb = w.data[None, :]
    elif w.ndim == 2:
        if w.shape != (n, c):
            raise ShapeError(f"mul_per_channel: weight shape {w.shape} != ({n}, {c})")
        wb = w.data
    else:
        raise ShapeError(f"mul_per_channel: weight must be rank 1 or 2, got {w.shape}")
    if x.ndim == 4:
        wb = wb[:, :, None, None]
    out = Tensor(x.data * wb)

    if recording(x, w):
        spatial_axes = (2, 3) if x.ndim == 4 else ()

        def backward(g):
            gx = g * wb if x.requires_grad else None
            gw = g * x.data
            if spatial_axes:
                gw = gw.sum(axis=spatial_axes)
            if w.ndim == 1:
                gw = gw.sum(axis=0)
            return gx, gw
        record_op(out, (x, w), backward)
    return out


def _pool_prepare(x: Tensor, k: int, stride: int, padding: int, fill: float):
    n, c, h, w = x.shape
    if padding:
        xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)),
                    constant_values=fill)
    else:
        xp = x.data
    hp, wp = xp.shape[2], xp.shape[3]
    ho = (hp - k) // stride + 1
    wo = (wp - k) // stride + 1
    if ho < 1 or wo < 1:
        raise ShapeError(
            f"pool: window {k} with stride {stride} does not fit input {h}x{w} "
            f"(padding {padding})")
    return xp, ho, wo


def avg_pool2d(x: Tensor, k: int, stride: int, padding: int = 0) -> Tensor:
    """Mean pooling with a k x k window (zero padding counts toward the mean)."""
    _require_rank(x, 4, "avg_pool2d", "input")
    xp, ho, wo = _pool_prepare(x, k, stride, padding, 0.0)
    windows = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    out = Tensor(windows.mean(axis=(4, 5)))

    if recording(x):
        h, w = x.shape[2], x.shape[3]
        inv = 1.0 / (k * k)

        def backward(g):
            gx_pad = np.zeros_like(xp)
            gshare = g * x.dtype.type(inv)
            for ki in range(k):
                for kj in range(k):
                    rows = slice(ki, ki + (ho - 1) * stride + 1, stride)
                    cols = slice(kj, kj + (wo - 1) * stride + 1, stride)
                    gx_pad[:, :, rows, cols] += gshare
            return (gx_pad[:, :, padding:padding + h, padding:padding + w],)
        record_op(out, (x,), backward)
    return out


def max_pool2d(x: Tensor, k: int, stride: int, padding: int = 0) -> Tensor:
    """Max pooling; padding uses -inf so padded cells never win.

    Ties route the gradient to the first element in row-major window
    order, keeping backward deterministic.
    """
    _require_rank(x, 4, "max_pool2d", "input")
    xp, ho, wo = _pool_prepare(x, k, stride, padding, -np.inf)
    windows = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    flat = windows.reshape(*windows.shape[:4], k * k)
    idx = flat.argmax(axis=4)
    out = Tensor(np.take_along_axis(flat, idx[..., None], axis=4)[..., 0])

    if recording(x):
        n, c, h, w = x.shape

        def backward(g):
            gx_pad = np.zeros_like(xp)
            ki, kj = idx // k, idx % k
            ni = np.arange(n)[:, None, None, None]
            ci = np.arange(c)[None, :, None, None]
            oi = np.arange(ho)[None, None, :, None]
            oj = np.arange(wo)[None, None, None, :]
            rows = oi * stride + ki
            cols = oj * stride + kj
            np.add.at(gx_pad, (np.broadcast_to(ni, idx.shape),
                               np.broadcast_to(ci, idx.shape), rows, cols), g)
            return (gx_pad[:, :, padding:padding + h, padding:padding + w],)
        record_op(out, (x,), backward)
    return out


def spatial_mean(x: Tensor) -> Tensor:
    """Global average pooling: (n, c, h, w) -> (n, c)."""
    _require_rank(x, 4, "spatial_mean", "input")
    out = Tensor(x.data.mean(axis=(2, 3)))
    if recording(x):
        n, c, h, w = x.shape
        inv = 1.0 / (h * w)

        def backward(g):
            return (np.broadcast_to((g * x.dtype.type(inv))[:, :, None, None],
                                    x.shape),)
        record_op(out, (x,), backward)
    return out


def nearest_upsample2x(x: Tensor) -> Tensor:
    """Duplicate every pixel into a 2x2 block."""
    _require_rank(x, 4, "nearest_upsample2x", "input")
    out = Tensor(np.repeat(np.repeat(x.data, 2, axis=2), 2, axis=3))
    if recording(x):
        n, c, h, w = x.shape

        def backward(g):
            return (g.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5)),)
        record_op(out, (x,), backward)
    return out


def sum_all(x: Tensor) -> Tensor:
    """Sum every element into a rank-0 tensor."""
    out = Tensor(np.asarray(x.data.sum(), dtype=x.dtype))
    if recording(x):
        def backward(g):
            return (np.full(x.shape, float(g), dtype=x.dtype),)
        record_op(out, (x,), backward)
    return out
