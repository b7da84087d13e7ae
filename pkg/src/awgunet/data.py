"""Dataset ingestion, deterministic splitting, batching, synthetic data.

The on-disk layout is ``<root>/images/*.png`` and ``<root>/masks/*.png``,
paired by filename stem; 8-bit and 16-bit PNGs are accepted.  Images
normalize to [0, 1] by the bit-depth maximum, masks binarize at half the
bit-depth maximum.  An alternative "predefined-dirs" layout holds a
``train/``, ``val/``, ``test/`` directory each with its own images/masks.

The synthetic blob generator stands in for stained-tissue data at desk
scale: dark anti-aliased ellipses ("nuclei") over a bright textured
background, with the exact ellipse interiors as ground-truth masks.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterator, Sequence

import numpy as np

from .autodiff import Tensor
from .exceptions import ConfigError
from .pngio import load_image_array, load_mask_array

SPLIT_NAMES = ("train", "val", "test")


@dataclass
class SamplePair:
    """One image (1, 3, h, w in [0, 1]) with its binary mask (1, 1, h, w)."""

    id: str
    image: Tensor
    mask: Tensor


@dataclass
class DatasetSplit:
    """Disjoint train/val/test id lists covering a dataset."""

    train: list[str]
    val: list[str]
    test: list[str]
    seed: int
    fractions: tuple[float, float, float]

    def subset(self, pairs: Sequence[SamplePair], name: str) -> list[SamplePair]:
        ids = set(getattr(self, name))
        return [p for p in pairs if p.id in ids]


def load_dataset(images_dir, masks_dir) -> list[SamplePair]:
    """Load paired PNGs sorted by id; every image must have a mask."""
    images_dir, masks_dir = Path(images_dir), Path(masks_dir)
    if not images_dir.is_dir():
        raise ConfigError(f"images directory not found: {images_dir}")
    if not masks_dir.is_dir():
        raise ConfigError(f"masks directory not found: {masks_dir}")
    pairs = []
    image_paths = sorted(images_dir.glob("*.png"), key=lambda p: p.stem)
    if not image_paths:
        raise ConfigError(f"no .png images in {images_dir}")
    for img_path in image_paths:
        mask_path = masks_dir / img_path.name
        if not mask_path.exists():
            raise ConfigError(
                f"missing mask for image stem {img_path.stem!r} "
                f"(expected {mask_path})")
        image = load_image_array(img_path)
        mask = load_mask_array(mask_path)
        if image.shape[1:] != mask.shape[1:]:
            raise ConfigError(
                f"image/mask size mismatch for stem {img_path.stem!r}: "
                f"{image.shape[1:]} vs {mask.shape[1:]}")
        pairs.append(SamplePair(
            id=img_path.stem,
            image=Tensor(image[None]),
            mask=Tensor(mask[None]),
        ))
    return pairs


def load_split_dirs(root) -> dict[str, list[SamplePair]]:
    """Load the predefined-dirs layout: <root>/{train,val,test}/{images,masks}."""
    root = Path(root)
    out = {}
    for name in SPLIT_NAMES:
        sub = root / name
        if not sub.is_dir():
            raise ConfigError(
                f"predefined-dirs layout needs {sub} (with images/ and masks/)")
        out[name] = load_dataset(sub / "images", sub / "masks")
    return out


def split_dataset(pairs: Sequence[SamplePair],
                  fractions: tuple[float, float, float] = (0.7, 0.2, 0.1),
                  seed: int = 0) -> DatasetSplit:
    """Seeded shuffle, then partition by floor counts (remainder to train)."""
    if len(fractions) != 3 or any(f < 0 for f in fractions):
        raise ConfigError(f"fractions must be 3 non-negative numbers, got {fractions}")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ConfigError(f"fractions must sum to 1, got {fractions}")
    n = len(pairs)
    if n < 3 and all(f > 0 for f in fractions):
        raise ConfigError(
            f"need at least 3 samples for a non-degenerate split, got {n}")
    ids = [p.id for p in pairs]
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    shuffled = [ids[i] for i in order]
    n_val = int(n * fractions[1])
    n_test = int(n * fractions[2])
    n_train = n - n_val - n_test
    return DatasetSplit(
        train=sorted(shuffled[:n_train]),
        val=sorted(shuffled[n_train:n_train + n_val]),
        test=sorted(shuffled[n_train + n_val:]),
        seed=seed,
        fractions=tuple(fractions),
    )


def _bilinear_resize(coarse: np.ndarray, size: int) -> np.ndarray:
    """Upsample a small 2-D grid to size x size with bilinear weights."""
    src = coarse.shape[0]
    pos = np.linspace(0, src - 1, size)
    i0 = np.clip(np.floor(pos).astype(int), 0, src - 2)
    frac = pos - i0
    rows = (coarse[i0] * (1 - frac)[:, None] + coarse[i0 + 1] * frac[:, None])
    cols = (rows[:, i0] * (1 - frac)[None, :] + rows[:, i0 + 1] * frac[None, :])
    return cols


def _render_blob_sample(rng: np.random.Generator, size: int):
    """One textured background with dark ellipses; returns (image, mask)."""
    # Bright, slightly pink-tinted background with low-frequency texture.
    coarse = rng.uniform(-1.0, 1.0, (max(size // 8, 2),) * 2)
    texture = _bilinear_resize(coarse, size) * 0.05
    base = rng.uniform(0.72, 0.85)
    tint = np.array([base + 0.05, base - 0.03, base + 0.02])
    image = np.clip(tint[:, None, None] + texture[None], 0.0, 1.0)

    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    mask = np.zeros((size, size), dtype=bool)
    fg = np.zeros((size, size))
    n_blobs = int(rng.integers(3, 7))
    for _ in range(n_blobs):
        cy, cx = rng.uniform(0.15 * size, 0.85 * size, 2)
        a = rng.uniform(0.10 * size, 0.22 * size)
        b = rng.uniform(0.10 * size, 0.22 * size)
        theta = rng.uniform(0, np.pi)
        ct, st = np.cos(theta), np.sin(theta)
        xr = (xx - cx) * ct + (yy - cy) * st
        yr = -(xx - cx) * st + (yy - cy) * ct
        rho = np.sqrt((xr / a) ** 2 + (yr / b) ** 2)
        mask |= rho <= 1.0
        # ~1px anti-aliased rim via the radial overshoot in pixel units.
        alpha = np.clip((1.0 - rho) * min(a, b) + 0.5, 0.0, 1.0)
        fg = np.maximum(fg, alpha)

    nucleus = np.array([0.30, 0.18, 0.38]) + rng.uniform(-0.04, 0.04, 3)
    image = image * (1.0 - fg[None]) + nucleus[:, None, None] * fg[None]
    return np.clip(image, 0.0, 1.0).astype(np.float32), mask.astype(np.float32)


def make_synthetic_blobs(count: int, size: int, seed: int = 0) -> list[SamplePair]:
    """Deterministic toy corpus of ellipse "nuclei" on textured backgrounds.

    Every mask covers between 2% and 60% of the image (samples outside
    that band are redrawn from the same seeded stream, keeping the result
    a pure function of (count, size, seed)).
    """
    if size % 4:
        raise ConfigError(f"blob size must be divisible by 4, got {size}")
    rng = np.random.default_rng(seed)
    pairs = []
    for i in range(count):
        while True:
            image, mask = _render_blob_sample(rng, size)
            frac = float(mask.mean())
            if 0.02 < frac < 0.6:
                break
        pairs.append(SamplePair(
            id=f"blob-{i:03d}",
            image=Tensor(image[None]),
            mask=Tensor(mask[None, None]),
        ))
    return pairs


def batches(pairs: Sequence[SamplePair], batch_size: int,
            rng: np.random.Generator | None = None,
            augment: Callable[[SamplePair], SamplePair] | None = None,
            ) -> Iterator[tuple[Tensor, Tensor, list[str]]]:
    """Yield (images, masks, ids) batches; partial final batch included.

    With ``rng`` given the order is a seeded shuffle, otherwise dataset
    order.  ``augment`` is an optional per-sample hook applied at batch
    assembly time; none ships by default.
    """
    if batch_size < 1:
        raise ConfigError(f"batch_size must be >= 1, got {batch_size}")
    order = list(range(len(pairs)))
    if rng is not None:
        order = list(rng.permutation(len(pairs)))
    for start in range(0, len(order), batch_size):
        chunk = [pairs[i] for i in order[start:start + batch_size]]
        if augment is not None:
            chunk = [augment(p) for p in chunk]
        images = Tensor(np.concatenate([p.image.data for p in chunk], axis=0))
        masks = Tensor(np.concatenate([p.mask.data for p in chunk], axis=0))
        yield images, masks, [p.id for p in chunk]
