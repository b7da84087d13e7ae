"""Single-level 2-D Haar wavelet transform as a differentiable layer.

The orthonormal convention (coefficients of 1/2) is used throughout: the
transform matrix over each 2x2 block is symmetric and orthogonal, so it
preserves total energy and is its own inverse.  Subbands are stacked along
the channel axis in the fixed order [LL, LH, HL, HH], each occupying a
block of C channels; checkpoints rely on this layout staying put.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, record_op, recording
from .exceptions import ShapeError

SUBBAND_ORDER = ("LL", "LH", "HL", "HH")


@dataclass
class WaveletDecomposition:
    """Haar subbands of a rank-4 tensor.

    ``tensor`` has shape (n, 4c, h/2, w/2) with channels laid out as
    [LL | LH | HL | HH] blocks of the input's c channels each.
    """

    tensor: Tensor
    orthonormal: bool = True

    @property
    def channels_in(self) -> int:
        return self.tensor.shape[1] // 4

    def subband(self, name: str) -> np.ndarray:
        """Read-only view of one subband's values, shape (n, c, h/2, w/2)."""
        c = self.channels_in
        i = SUBBAND_ORDER.index(name)
        return self.tensor.data[:, i * c:(i + 1) * c]


def _corners(data: np.ndarray):
    a = data[:, :, 0::2, 0::2]
    b = data[:, :, 0::2, 1::2]
    c = data[:, :, 1::2, 0::2]
    d = data[:, :, 1::2, 1::2]
    return a, b, c, d


def dwt_haar_forward(x: Tensor) -> WaveletDecomposition:
    """Decompose (n, c, h, w) into (n, 4c, h/2, w/2) Haar subbands.

    For each non-overlapping 2x2 block [[a, b], [c, d]]:

        LL = (a + b + c + d) / 2      HL = (a + b - c - d) / 2
        LH = (a - b + c - d) / 2      HH = (a - b - c + d) / 2
    """
    if x.ndim != 4:
        raise ShapeError(f"dwt_haar_forward: input must be rank 4, got {x.shape}")
    n, ch, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(
            f"dwt_haar_forward: spatial dims must be even, got {h}x{w}; "
            "pad the input first (the model guarantees even dims at every scale)")
    a, b, c, d = _corners(x.data)
    half = x.dtype.type(0.5)
    out_data = np.concatenate(
        [
            (a + b + c + d) * half,
            (a - b + c - d) * half,
            (a + b - c - d) * half,
            (a - b - c + d) * half,
        ],
        axis=1,
    )
    out = Tensor(out_data)

    if recording(x):
        def backward(g):
            gll, glh, ghl, ghh = (g[:, i * ch:(i + 1) * ch] for i in range(4))
            gx = np.empty_like(x.data)
            # The block transform matrix is symmetric, so the adjoint
            # applies the same four formulas to the subband gradients.
            gx[:, :, 0::2, 0::2] = (gll + glh + ghl + ghh) * half
            gx[:, :, 0::2, 1::2] = (gll - glh + ghl - ghh) * half
            gx[:, :, 1::2, 0::2] = (gll + glh - ghl - ghh) * half
            gx[:, :, 1::2, 1::2] = (gll - glh - ghl + ghh) * half
            return (gx,)
        record_op(out, (x,), backward)
    return WaveletDecomposition(tensor=out)


def dwt_haar_inverse(dec: WaveletDecomposition) -> Tensor:
    """Exact inverse of :func:`dwt_haar_forward` (same symmetric matrix)."""
    t = dec.tensor
    if t.ndim != 4 or t.shape[1] % 4:
        raise ShapeError(
            f"dwt_haar_inverse: expected (n, 4c, h, w) subbands, got {t.shape}")
    ch = t.shape[1] // 4
    ll, lh, hl, hh = (t.data[:, i * ch:(i + 1) * ch] for i in range(4))
    half = t.dtype.type(0.5)
    n, _, hh2, ww2 = t.shape
    out_data = np.empty((n, ch, hh2 * 2, ww2 * 2), dtype=t.dtype)
    out_data[:, :, 0::2, 0::2] = (ll + lh + hl + hh) * half
    out_data[:, :, 0::2, 1::2] = (ll - lh + hl - hh) * half
    out_data[:, :, 1::2, 0::2] = (ll + lh - hl - hh) * half
    out_data[:, :, 1::2, 1::2] = (ll - lh - hl + hh) * half
    out = Tensor(out_data)

    if recording(t):
        def backward(g):
            ga, gb, gc, gd = _corners(g)
            return (np.concatenate(
                [
                    (ga + gb + gc + gd) * half,
                    (ga - gb + gc - gd) * half,
                    (ga + gb - gc - gd) * half,
                    (ga - gb - gc + gd) * half,
                ],
                axis=1,
            ),)
        record_op(out, (t,), backward)
    return out
