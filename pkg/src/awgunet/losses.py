"""Training losses: soft dice, binary cross-entropy, and their weighted sum.

Both losses reduce over the whole batch and are differentiable with
respect to the predictions only; the target mask is treated as constant.
"""

from __future__ import annotations

import numpy as np

from . import ops
from .autodiff import Tensor, record_op, recording
from .exceptions import ShapeError

BCE_CLAMP = 1e-7


def _check_pair(pred: Tensor, target: Tensor, op: str) -> None:
    if pred.shape != target.shape:
        raise ShapeError(
            f"{op}: prediction shape {pred.shape} != target shape {target.shape}")


def dice_loss(pred: Tensor, target: Tensor, eps: float = 1e-6) -> Tensor:
    """1 - (2*sum(p*g) + eps) / (sum(p) + sum(g) + eps), over the batch."""
    _check_pair(pred, target, "dice_loss")
    if eps <= 0:
        raise ValueError(f"dice_loss: eps must be > 0, got {eps}")
    p, g = pred.data, target.data
    inter = float((p * g).sum())
    denom = float(p.sum()) + float(g.sum()) + eps
    out = Tensor(np.asarray(1.0 - (2.0 * inter + eps) / denom, dtype=pred.dtype))

    if recording(pred, target):
        def backward(gout):
            scale = float(gout)
            gp = -(2.0 * g * denom - (2.0 * inter + eps)) / (denom * denom)
            return ((scale * gp).astype(pred.dtype, copy=False), None)
        record_op(out, (pred, target), backward)
    return out


def bce_loss(pred: Tensor, target: Tensor) -> Tensor:
    """Mean binary cross-entropy; predictions are clamped away from {0, 1}.

    Elements that hit the clamp receive zero gradient, matching the
    piecewise-constant clamped forward value.
    """
    _check_pair(pred, target, "bce_loss")
    p = np.clip(pred.data, BCE_CLAMP, 1.0 - BCE_CLAMP)
    g = target.data
    n = p.size
    total = -(g * np.log(p) + (1.0 - g) * np.log1p(-p)).sum()
    out = Tensor(np.asarray(total / n, dtype=pred.dtype))

    if recording(pred, target):
        unclamped = (pred.data > BCE_CLAMP) & (pred.data < 1.0 - BCE_CLAMP)

        def backward(gout):
            gp = (-g / p + (1.0 - g) / (1.0 - p)) / n
            gp = gp * unclamped
            return ((float(gout) * gp).astype(pred.dtype, copy=False), None)
        record_op(out, (pred, target), backward)
    return out


def combined_loss(pred: Tensor, target: Tensor, w_dice: float = 1.0,
                  w_bce: float = 1.0, eps: float = 1e-6) -> Tensor:
    """w_dice * dice_loss + w_bce * bce_loss."""
    if w_dice < 0 or w_bce < 0:
        raise ValueError(
            f"combined_loss: weights must be >= 0, got {w_dice}, {w_bce}")
    if w_bce == 0:
        return dice_loss(pred, target, eps=eps)
    if w_dice == 0:
        return bce_loss(pred, target)
    return ops.add(ops.scale(dice_loss(pred, target, eps=eps), w_dice),
                   ops.scale(bce_loss(pred, target), w_bce))
