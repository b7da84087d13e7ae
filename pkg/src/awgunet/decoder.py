"""Decoder building blocks: anti-aliased upsampling and multi-scale convs.

The upsample block doubles spatial dims along two parallel routes and
concatenates them: a fixed-filter route (nearest-neighbor 2x expansion
smoothed by constant Gaussian and Lanczos kernels, averaged, then mixed by
a learned 1x1 convolution) and a learned stride-2 transposed convolution
that recovers local detail the smoothing discards.

The convolution block then reads the fused map at three receptive fields
(5x5, 3x3, 1x1), instance-normalizes and rectifies each branch, and fuses
the concatenation with a final 3x3 convolution.
"""

from __future__ import annotations

import numpy as np

from . import ops
from .autodiff import DEFAULT_DTYPE, Tensor
from .exceptions import ConfigError
from .optim import ParameterStore, he_normal

FIXED_KERNEL_SIZE = 5


def gaussian_kernel(sigma: float = 1.0, size: int = FIXED_KERNEL_SIZE) -> np.ndarray:
    """Unit-sum isotropic Gaussian tap matrix on integer offsets."""
    if sigma <= 0:
        raise ConfigError(f"gaussian_kernel: sigma must be > 0, got {sigma}")
    r = size // 2
    t = np.arange(-r, r + 1, dtype=np.float64)
    w1 = np.exp(-0.5 * (t / sigma) ** 2)
    k = np.outer(w1, w1)
    return k / k.sum()


def lanczos_kernel(size: int = FIXED_KERNEL_SIZE) -> np.ndarray:
    """Unit-sum two-lobe Lanczos window sampled at integer offsets.

    Taps come from sin(t)/t * sin(t/2)/(t/2) on t in {-2..2} (the
    normalized-sinc reading collapses to a delta at integer offsets and
    would not smooth at all); the outer product is renormalized to unit
    sum so constants are preserved exactly.
    """
    r = size // 2
    t = np.arange(-r, r + 1, dtype=np.float64)
    with np.errstate(invalid="ignore", divide="ignore"):
        w1 = np.where(t == 0, 1.0,
                      np.sin(t) / np.where(t == 0, 1.0, t)
                      * np.sin(t / 2.0) / np.where(t == 0, 1.0, t / 2.0))
    k = np.outer(w1, w1)
    return k / k.sum()


class FixedFilterBank:
    """The two constant smoothing kernels used by every upsample block.

    These are plain arrays, never registered in a ParameterStore: they
    receive no updates, though gradients still flow *through* them to the
    upsampled activations.
    """

    def __init__(self, sigma: float = 1.0):
        self.sigma = sigma
        self.gaussian = gaussian_kernel(sigma)
        self.lanczos = lanczos_kernel()


def upsample_fixed(x: Tensor, kernel: np.ndarray) -> Tensor:
    """Nearest-neighbor 2x expansion followed by a fixed depthwise smooth.

    The kernel (any unit-sum 2-D tap matrix) is shared across channels.
    Edge-replicate padding keeps the full tap mass inside the image, so
    constant inputs come back exactly unchanged.
    """
    c = x.shape[1]
    k = kernel.shape[0]
    weight = Tensor(np.broadcast_to(
        kernel.astype(x.dtype)[None, None], (c, 1, k, k)), requires_grad=False)
    return ops.depthwise_conv2d(ops.nearest_upsample2x(x), weight, pad_mode="edge")


class UpsampleBlock:
    """Double spatial dims via fixed-filter and learned routes, fused.

    Output has ``c_out`` channels: ``c_out // 2`` from the 1x1-mixed
    fixed-filter route and ``c_out // 2`` from the transposed convolution.
    ``fusion`` selects how the Gaussian and Lanczos paths merge before the
    1x1 mix: "mean" (default, scale-preserving) or "concat".
    """

    def __init__(self, store: ParameterStore, prefix: str, c_in: int, c_out: int,
                 bank: FixedFilterBank, rng: np.random.Generator,
                 fusion: str = "mean", dtype=DEFAULT_DTYPE):
        if c_out % 2:
            raise ConfigError(f"{prefix}: output channels must be even, got {c_out}")
        if fusion not in ("mean", "concat"):
            raise ConfigError(f"{prefix}: fusion must be 'mean' or 'concat', got {fusion!r}")
        self.prefix = prefix
        self.bank = bank
        self.fusion = fusion
        c_half = c_out // 2
        c_up = c_in if fusion == "mean" else 2 * c_in
        reg = store.register
        reg(f"{prefix}.mix.weight", Tensor(
            he_normal(rng, (c_half, c_up, 1, 1), fan_in=c_up, dtype=dtype)))
        reg(f"{prefix}.mix.bias", Tensor(np.zeros(c_half, dtype=dtype)))
        reg(f"{prefix}.tc.weight", Tensor(
            he_normal(rng, (c_in, c_half, 2, 2), fan_in=c_in * 4, dtype=dtype)))
        reg(f"{prefix}.tc.bias", Tensor(np.zeros(c_half, dtype=dtype)))

    def __call__(self, params: ParameterStore, x: Tensor) -> Tensor:
        p = self.prefix
        smooth_g = upsample_fixed(x, self.bank.gaussian)
        smooth_l = upsample_fixed(x, self.bank.lanczos)
        if self.fusion == "mean":
            smoothed = ops.scale(ops.add(smooth_g, smooth_l), 0.5)
        else:
            smoothed = ops.concat_channels([smooth_g, smooth_l])
        mixed = ops.conv2d(smoothed, params[f"{p}.mix.weight"],
                           params[f"{p}.mix.bias"])
        detail = ops.transposed_conv2d(x, params[f"{p}.tc.weight"],
                                       params[f"{p}.tc.bias"], stride=2)
        return ops.concat_channels([mixed, detail])


class ConvBlock:
    """Parallel 5x5 / 3x3 / 1x1 convolutions fused into ``c_out`` channels.

    Each branch emits ``c_out // 2`` channels through instance norm and
    ReLU; the concatenation passes a final 3x3 convolution, instance norm
    and ReLU.  Convolutions that feed a norm directly carry no bias (the
    normalization would cancel it, leaving a dead parameter).
    """

    BRANCH_KERNELS = (5, 3, 1)

    def __init__(self, store: ParameterStore, prefix: str, c_in: int, c_out: int,
                 rng: np.random.Generator, dtype=DEFAULT_DTYPE):
        if c_out % 2:
            raise ConfigError(f"{prefix}: output channels must be even, got {c_out}")
        self.prefix = prefix
        c_half = c_out // 2
        reg = store.register
        for k in self.BRANCH_KERNELS:
            reg(f"{prefix}.branch{k}.weight", Tensor(
                he_normal(rng, (c_half, c_in, k, k), fan_in=c_in * k * k, dtype=dtype)))
            reg(f"{prefix}.branch{k}.gamma", Tensor(np.ones(c_half, dtype=dtype)))
            reg(f"{prefix}.branch{k}.beta", Tensor(np.zeros(c_half, dtype=dtype)))
        fused_in = 3 * c_half
        reg(f"{prefix}.fuse.weight", Tensor(
            he_normal(rng, (c_out, fused_in, 3, 3), fan_in=fused_in * 9, dtype=dtype)))
        reg(f"{prefix}.fuse.gamma", Tensor(np.ones(c_out, dtype=dtype)))
        reg(f"{prefix}.fuse.beta", Tensor(np.zeros(c_out, dtype=dtype)))

    def __call__(self, params: ParameterStore, x: Tensor) -> Tensor:
        p = self.prefix
        branches = []
        for k in self.BRANCH_KERNELS:
            y = ops.conv2d(x, params[f"{p}.branch{k}.weight"])
            y = ops.instance_norm(y, params[f"{p}.branch{k}.gamma"],
                                  params[f"{p}.branch{k}.beta"])
            branches.append(ops.relu(y))
        y = ops.conv2d(ops.concat_channels(branches), params[f"{p}.fuse.weight"])
        y = ops.instance_norm(y, params[f"{p}.fuse.gamma"], params[f"{p}.fuse.beta"])
        return ops.relu(y)
