"""Wavelet-guided channel attention for skip connections.

The gate fuses two signals computed from the same skip feature map:

* a spatial map in (0, 1): the input's Haar subbands are upsampled back
  to full resolution by a learned stride-2 transposed convolution,
  compressed to the input width by a separable convolution, added to a
  separably-convolved copy of the input, and squashed by a sigmoid;
* a per-channel weight vector in (0, 1): spatial means, scaled by a
  learnable per-channel gain, pass through a two-layer bottleneck
  (ReLU then sigmoid).

The output is ``input * spatial_map`` rescaled channel-wise by the
per-channel weights; its shape always equals the input's.
"""

from __future__ import annotations

import numpy as np

from . import ops
from .autodiff import DEFAULT_DTYPE, Tensor
from .exceptions import ConfigError
from .optim import ParameterStore, he_normal
from .wavelet import dwt_haar_forward

DEPTHWISE_K = 3  # depthwise stage kernel; pointwise stage is always 1x1


def weighted_global_pool(x: Tensor, alpha: Tensor, dense1_w: Tensor,
                         dense1_b: Tensor, dense2_w: Tensor,
                         dense2_b: Tensor) -> Tensor:
    """Per-channel attention weights from gain-scaled global pooling.

    ``g[n, c] = alpha[c] * mean(x[n, c])`` feeds a bottleneck of two dense
    layers (rectified, then sigmoid), returning an (n, c) tensor of
    weights in the open interval (0, 1).  With ``alpha`` fixed at ones
    this reduces to plain global average pooling.

    The rectifier is leaky: the bottleneck is only channels/reduction
    units wide, and with zero-initialized biases a hard ReLU regularly
    leaves the whole hidden layer inactive at init, cutting gradient flow
    to the pooling gains for good.
    """
    pooled = ops.mul_per_channel(ops.spatial_mean(x), alpha)
    hidden = ops.leaky_relu(ops.dense(pooled, dense1_w, dense1_b))
    return ops.sigmoid(ops.dense(hidden, dense2_w, dense2_b))


class WaveletChannelAttention:
    """One attention gate instance, bound to a parameter prefix.

    Parameters live in the given store under ``<prefix>.<name>``; the
    layer itself holds only names and static shape info, so a store can
    be swapped wholesale (checkpoint loading) without rebuilding layers.

    With ``learnable_gain=False`` the per-channel pooling gain is a
    constant vector of ones that is *not* registered in the store and
    receives no updates; this is the plain-GAP ablation, which matches
    the learnable variant exactly at initialization.
    """

    def __init__(self, store: ParameterStore, prefix: str, channels: int,
                 reduction: int, rng: np.random.Generator,
                 learnable_gain: bool = True, dtype=DEFAULT_DTYPE):
        if channels % reduction:
            raise ConfigError(
                f"{prefix}: reduction {reduction} must divide channels {channels}")
        self.prefix = prefix
        self.channels = channels
        self.reduction = reduction
        self.learnable_gain = learnable_gain
        c, c4 = channels, 4 * channels
        hidden = channels // reduction
        k = DEPTHWISE_K
        reg = store.register

        # Subband-upsampling path: stride-2 transposed conv restores H x W
        # while keeping all 4c subband channels, then a separable conv
        # compresses back to the input width.
        reg(f"{prefix}.ct.weight", Tensor(
            he_normal(rng, (c4, c4, 2, 2), fan_in=c4 * 4, dtype=dtype)))
        reg(f"{prefix}.ct.bias", Tensor(np.zeros(c4, dtype=dtype)))
        reg(f"{prefix}.wav.dw", Tensor(
            he_normal(rng, (c4, 1, k, k), fan_in=k * k, dtype=dtype)))
        reg(f"{prefix}.wav.pw", Tensor(
            he_normal(rng, (c, c4, 1, 1), fan_in=c4, dtype=dtype)))
        reg(f"{prefix}.wav.bias", Tensor(np.zeros(c, dtype=dtype)))

        reg(f"{prefix}.inp.dw", Tensor(
            he_normal(rng, (c, 1, k, k), fan_in=k * k, dtype=dtype)))
        reg(f"{prefix}.inp.pw", Tensor(
            he_normal(rng, (c, c, 1, 1), fan_in=c, dtype=dtype)))
        reg(f"{prefix}.inp.bias", Tensor(np.zeros(c, dtype=dtype)))

        reg(f"{prefix}.fuse.dw", Tensor(
            he_normal(rng, (c, 1, k, k), fan_in=k * k, dtype=dtype)))
        reg(f"{prefix}.fuse.pw", Tensor(
            he_normal(rng, (c, c, 1, 1), fan_in=c, dtype=dtype)))
        reg(f"{prefix}.fuse.bias", Tensor(np.zeros(c, dtype=dtype)))

        if learnable_gain:
            reg(f"{prefix}.alpha", Tensor(np.ones(c, dtype=dtype)))
            self._fixed_gain = None
        else:
            self._fixed_gain = Tensor(np.ones(c, dtype=dtype))

        reg(f"{prefix}.dense1.weight", Tensor(
            he_normal(rng, (hidden, c), fan_in=c, dtype=dtype)))
        reg(f"{prefix}.dense1.bias", Tensor(np.zeros(hidden, dtype=dtype)))
        reg(f"{prefix}.dense2.weight", Tensor(
            he_normal(rng, (c, hidden), fan_in=hidden, dtype=dtype)))
        reg(f"{prefix}.dense2.bias", Tensor(np.zeros(c, dtype=dtype)))

    def gain(self, params: ParameterStore) -> Tensor:
        if self._fixed_gain is not None:
            return self._fixed_gain
        return params[f"{self.prefix}.alpha"]

    def wavelet_branch(self, params: ParameterStore, x: Tensor) -> Tensor:
        """Haar subbands -> learned 2x upsampling -> width compression."""
        p = self.prefix
        dec = dwt_haar_forward(x)
        restored = ops.transposed_conv2d(
            dec.tensor, params[f"{p}.ct.weight"], params[f"{p}.ct.bias"], stride=2)
        return ops.separable_conv2d(
            restored, params[f"{p}.wav.dw"], params[f"{p}.wav.pw"],
            params[f"{p}.wav.bias"])

    def spatial_gate(self, params: ParameterStore, x: Tensor) -> Tensor:
        """Sigmoid map in (0, 1) combining input and wavelet features."""
        p = self.prefix
        refined = ops.separable_conv2d(
            x, params[f"{p}.inp.dw"], params[f"{p}.inp.pw"], params[f"{p}.inp.bias"])
        fused = ops.add(refined, self.wavelet_branch(params, x))
        fused = ops.separable_conv2d(
            fused, params[f"{p}.fuse.dw"], params[f"{p}.fuse.pw"],
            params[f"{p}.fuse.bias"])
        return ops.sigmoid(fused)

    def channel_weights(self, params: ParameterStore, x: Tensor) -> Tensor:
        p = self.prefix
        return weighted_global_pool(
            x, self.gain(params),
            params[f"{p}.dense1.weight"], params[f"{p}.dense1.bias"],
            params[f"{p}.dense2.weight"], params[f"{p}.dense2.bias"])

    def __call__(self, params: ParameterStore, x: Tensor) -> Tensor:
        gated = ops.mul_elementwise(self.spatial_gate(params, x), x)
        return ops.mul_per_channel(gated, self.channel_weights(params, x))
