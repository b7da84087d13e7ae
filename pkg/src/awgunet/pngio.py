"""PNG reading/writing shared by the dataset loader and feature dumps."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from .exceptions import ConfigError


def load_image_array(path) -> np.ndarray:
    """Read an image as (3, h, w) float32 scaled to [0, 1].

    8-bit inputs of any mode are converted to RGB and divided by 255;
    16-bit grayscale is divided by 65535 and replicated to three channels.
    """
    with Image.open(path) as im:
        if im.mode in ("I", "I;16", "I;16B"):
            arr = np.asarray(im, dtype=np.float32) / 65535.0
            return np.repeat(arr[None], 3, axis=0)
        arr = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
        return arr.transpose(2, 0, 1)


def load_mask_array(path) -> np.ndarray:
    """Read a mask as (1, h, w) float32 with values exactly 0 or 1.

    Pixels above half the bit-depth maximum (127 for 8-bit, 32767 for
    16-bit) map to 1.
    """
    with Image.open(path) as im:
        if im.mode in ("I", "I;16", "I;16B"):
            raw = np.asarray(im, dtype=np.int64)
            threshold = 32767
        else:
            raw = np.asarray(im.convert("L"), dtype=np.int64)
            threshold = 127
    return (raw > threshold).astype(np.float32)[None]


def save_mask_png(path, mask01: np.ndarray) -> None:
    """Write a binary mask as an 8-bit grayscale PNG of {0, 255}."""
    arr = np.squeeze(np.asarray(mask01))
    if arr.ndim != 2:
        raise ConfigError(f"save_mask_png: mask must be 2-D, got shape {arr.shape}")
    Image.fromarray(((arr > 0.5) * 255).astype(np.uint8), mode="L").save(path)


def save_grayscale_png(path, values: np.ndarray) -> None:
    """Write a float image in [0, 1] as an 8-bit grayscale PNG."""
    arr = np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0)
    if arr.ndim != 2:
        raise ConfigError(
            f"save_grayscale_png: image must be 2-D, got shape {arr.shape}")
    Image.fromarray(np.round(arr * 255.0).astype(np.uint8), mode="L").save(path)


def normalize_map(values: np.ndarray) -> np.ndarray:
    """Min-max normalize to [0, 1]; zero-range maps render as all zeros."""
    arr = np.asarray(values, dtype=np.float64)
    lo, hi = float(arr.min()), float(arr.max())
    if hi <= lo:
        return np.zeros_like(arr)
    return (arr - lo) / (hi - lo)


def ensure_dir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p
