"""Full network assembly: encoder backbone, attention-gated skips, decoder.

The encoder re-implements the DenseNet-121 block structure (stem, four
dense blocks with bottleneck layers, transition downsampling) with a
configurable growth rate and instance normalization, randomly initialized.
Skip features are tapped after the stem and after each of the first three
dense blocks; the three deeper skips pass through a wavelet-guided channel
attention gate in the attention-enabled variants.

Four ablation variants are exposed:

* ``baseline_unet_densenet`` (i): no attention, plain transposed-conv
  decoder with double 3x3 convolutions;
* ``wgcam_gap`` (ii): attention gates with plain global average pooling
  (the per-channel gain is a frozen constant 1);
* ``wgcam_lwgap`` (iii): same, with the per-channel gain learnable;
* ``full`` (iv): (iii) plus the anti-aliased upsample/conv decoder blocks.

Spatial bookkeeping: the input (divisible by 32) is halved five times on
the way down, so every gated skip has even dims for the Haar transform,
and each of the five decoder stages doubles dims exactly back to the
input resolution.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import ops
from .attention import WaveletChannelAttention
from .autodiff import DEFAULT_DTYPE, Tensor
from .decoder import ConvBlock, FixedFilterBank, UpsampleBlock
from .exceptions import ConfigError, ShapeError
from .optim import ParameterStore, he_normal
from .pngio import ensure_dir, normalize_map, save_grayscale_png
from .wavelet import SUBBAND_ORDER, dwt_haar_forward

VARIANTS = ("baseline_unet_densenet", "wgcam_gap", "wgcam_lwgap", "full")

# Roman-numeral ablation labels accepted anywhere a variant is named.
VARIANT_ALIASES = {
    "i": "baseline_unet_densenet",
    "ii": "wgcam_gap",
    "iii": "wgcam_lwgap",
    "iv": "full",
}

INTERMEDIATE_FILES = ("DWT-1.png", "DWT-2.png", "DWT-3.png",
                      "ELS.png", "BOT.png", "DLS.png")


def resolve_variant(name: str) -> str:
    key = name.strip().lower()
    key = VARIANT_ALIASES.get(key, key)
    if key not in VARIANTS:
        raise ConfigError(
            f"unknown variant {name!r}; use one of {', '.join(VARIANTS)} "
            f"or {', '.join(VARIANT_ALIASES)}")
    return key


@dataclass
class ModelConfig:
    """Architecture hyperparameters; defaults give the full-scale profile."""

    variant: str = "full"
    input_size: tuple[int, int] = (512, 512)
    input_channels: int = 3
    growth_rate: int = 32
    block_layers: tuple[int, ...] = (6, 12, 24, 16)
    decoder_widths: tuple[int, ...] = (256, 128, 64, 32, 16)
    wgcam_reduction: int = 8
    gaussian_sigma: float = 1.0
    upsample_fusion: str = "mean"
    seed: int = 0

    @classmethod
    def desk_profile(cls, variant: str = "full", seed: int = 0,
                     input_size: tuple[int, int] = (64, 64)) -> "ModelConfig":
        """Small profile every test uses: 64x64 inputs, growth 8."""
        return cls(
            variant=resolve_variant(variant),
            input_size=input_size,
            growth_rate=8,
            block_layers=(2, 2, 2, 2),
            decoder_widths=(32, 24, 16, 12, 8),
            seed=seed,
        )

    def validate(self) -> None:
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        h, w = self.input_size
        if h % 32 or w % 32 or h < 32 or w < 32:
            raise ConfigError(
                f"input size must be divisible by 32 (five halvings), got {h}x{w}")
        if self.input_channels < 1:
            raise ConfigError("input_channels must be >= 1")
        if self.growth_rate < 1:
            raise ConfigError("growth_rate must be >= 1")
        if len(self.block_layers) != 4 or any(n < 1 for n in self.block_layers):
            raise ConfigError(
                f"block_layers needs 4 positive entries, got {self.block_layers}")
        if len(self.decoder_widths) != 5:
            raise ConfigError(
                f"decoder_widths needs 5 entries (one per stage), got "
                f"{self.decoder_widths}")
        if any(c < 2 or c % 2 for c in self.decoder_widths):
            raise ConfigError(
                f"decoder widths must be positive even numbers, got "
                f"{self.decoder_widths}")
        if self.wgcam_reduction < 1:
            raise ConfigError("wgcam_reduction must be >= 1")
        if self.gaussian_sigma <= 0:
            raise ConfigError("gaussian_sigma must be > 0")
        if self.upsample_fusion not in ("mean", "concat"):
            raise ConfigError(
                f"upsample_fusion must be 'mean' or 'concat', got "
                f"{self.upsample_fusion!r}")
        for skip_c in self.skip_channels()[1:]:
            if skip_c % self.wgcam_reduction:
                raise ConfigError(
                    f"wgcam_reduction {self.wgcam_reduction} must divide every "
                    f"gated skip width; widths are {self.skip_channels()[1:]}")

    # -- channel bookkeeping ------------------------------------------------

    def stem_channels(self) -> int:
        return 2 * self.growth_rate

    def skip_channels(self) -> tuple[int, int, int, int]:
        """Widths of the four skip taps, shallowest (stem) first."""
        c = self.stem_channels()
        skips = [c]
        for layers in self.block_layers[:3]:
            c += layers * self.growth_rate
            skips.append(c)
            c //= 2  # transition compression
        return tuple(skips)

    def bottleneck_channels(self) -> int:
        c = self.stem_channels()
        for i, layers in enumerate(self.block_layers):
            c += layers * self.growth_rate
            if i < 3:
                c //= 2
        return c

    # -- flat text serialization (embedded in checkpoints) -------------------

    _LIST_FIELDS = ("block_layers", "decoder_widths")

    def to_mapping(self) -> dict[str, str]:
        return {
            "variant": self.variant,
            "input_h": str(self.input_size[0]),
            "input_w": str(self.input_size[1]),
            "input_channels": str(self.input_channels),
            "growth_rate": str(self.growth_rate),
            "block_layers": ",".join(map(str, self.block_layers)),
            "decoder_widths": ",".join(map(str, self.decoder_widths)),
            "wgcam_reduction": str(self.wgcam_reduction),
            "gaussian_sigma": repr(self.gaussian_sigma),
            "upsample_fusion": self.upsample_fusion,
            "seed": str(self.seed),
        }

    @classmethod
    def from_mapping(cls, mapping: dict[str, str]) -> "ModelConfig":
        cfg = cls()
        known = cfg.to_mapping().keys()
        unknown = set(mapping) - set(known)
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")

        def get(key, parse, default):
            if key not in mapping:
                return default
            try:
                return parse(mapping[key])
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"bad value for {key!r}: {mapping[key]!r}") from exc

        int_list = lambda s: tuple(int(v) for v in s.split(","))
        cfg = cls(
            variant=resolve_variant(get("variant", str, cfg.variant)),
            input_size=(get("input_h", int, cfg.input_size[0]),
                        get("input_w", int, cfg.input_size[1])),
            input_channels=get("input_channels", int, cfg.input_channels),
            growth_rate=get("growth_rate", int, cfg.growth_rate),
            block_layers=get("block_layers", int_list, cfg.block_layers),
            decoder_widths=get("decoder_widths", int_list, cfg.decoder_widths),
            wgcam_reduction=get("wgcam_reduction", int, cfg.wgcam_reduction),
            gaussian_sigma=get("gaussian_sigma", float, cfg.gaussian_sigma),
            upsample_fusion=get("upsample_fusion", str, cfg.upsample_fusion),
            seed=get("seed", int, cfg.seed),
        )
        cfg.validate()
        return cfg

    def to_text(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in self.to_mapping().items())


# -- layer pieces -----------------------------------------------------------
# Convolutions immediately followed by instance norm are bias-free: the
# normalization removes per-channel constant shifts, which would leave the
# bias with an identically zero gradient.


class _Norm:
    def __init__(self, store, prefix, channels, dtype):
        self.prefix = prefix
        store.register(f"{prefix}.gamma", Tensor(np.ones(channels, dtype=dtype)))
        store.register(f"{prefix}.beta", Tensor(np.zeros(channels, dtype=dtype)))

    def __call__(self, params, x):
        return ops.instance_norm(x, params[f"{self.prefix}.gamma"],
                                 params[f"{self.prefix}.beta"])


class _Stem:
    """7x7 stride-2 convolution, norm, ReLU; 3x3 stride-2 max pool."""

    def __init__(self, store, prefix, c_in, c_out, rng, dtype):
        self.prefix = prefix
        store.register(f"{prefix}.conv.weight", Tensor(
            he_normal(rng, (c_out, c_in, 7, 7), fan_in=c_in * 49, dtype=dtype)))
        self.norm = _Norm(store, f"{prefix}.norm", c_out, dtype)

    def features(self, params, x):
        y = ops.conv2d(x, params[f"{self.prefix}.conv.weight"], stride=2)
        return ops.relu(self.norm(params, y))

    @staticmethod
    def pool(features):
        return ops.max_pool2d(features, k=3, stride=2, padding=1)


class _DenseLayer:
    """Pre-activation bottleneck layer: norm-relu-1x1(4g), norm-relu-3x3(g)."""

    def __init__(self, store, prefix, c_in, growth, rng, dtype):
        self.prefix = prefix
        mid = 4 * growth
        self.norm1 = _Norm(store, f"{prefix}.norm1", c_in, dtype)
        store.register(f"{prefix}.conv1.weight", Tensor(
            he_normal(rng, (mid, c_in, 1, 1), fan_in=c_in, dtype=dtype)))
        self.norm2 = _Norm(store, f"{prefix}.norm2", mid, dtype)
        store.register(f"{prefix}.conv2.weight", Tensor(
            he_normal(rng, (growth, mid, 3, 3), fan_in=mid * 9, dtype=dtype)))

    def __call__(self, params, x):
        y = ops.relu(self.norm1(params, x))
        y = ops.conv2d(y, params[f"{self.prefix}.conv1.weight"])
        y = ops.relu(self.norm2(params, y))
        y = ops.conv2d(y, params[f"{self.prefix}.conv2.weight"])
        return ops.concat_channels([x, y])


class _DenseBlock:
    def __init__(self, store, prefix, c_in, layers, growth, rng, dtype):
        self.layers = [
            _DenseLayer(store, f"{prefix}.layer{i + 1}", c_in + i * growth,
                        growth, rng, dtype)
            for i in range(layers)
        ]

    def __call__(self, params, x):
        for layer in self.layers:
            x = layer(params, x)
        return x


class _Transition:
    """norm-relu-1x1 halving channels, then 2x2 average pool."""

    def __init__(self, store, prefix, c_in, rng, dtype):
        self.prefix = prefix
        self.norm = _Norm(store, f"{prefix}.norm", c_in, dtype)
        store.register(f"{prefix}.conv.weight", Tensor(
            he_normal(rng, (c_in // 2, c_in, 1, 1), fan_in=c_in, dtype=dtype)))

    def __call__(self, params, x):
        y = ops.relu(self.norm(params, x))
        y = ops.conv2d(y, params[f"{self.prefix}.conv.weight"])
        return ops.avg_pool2d(y, k=2, stride=2)


class _DoubleConv:
    """Two (3x3 conv, norm, ReLU) stages; the classic U-Net refinement."""

    def __init__(self, store, prefix, c_in, c_out, rng, dtype):
        self.prefix = prefix
        store.register(f"{prefix}.conv_a.weight", Tensor(
            he_normal(rng, (c_out, c_in, 3, 3), fan_in=c_in * 9, dtype=dtype)))
        self.norm_a = _Norm(store, f"{prefix}.norm_a", c_out, dtype)
        store.register(f"{prefix}.conv_b.weight", Tensor(
            he_normal(rng, (c_out, c_out, 3, 3), fan_in=c_out * 9, dtype=dtype)))
        self.norm_b = _Norm(store, f"{prefix}.norm_b", c_out, dtype)

    def __call__(self, params, x):
        y = ops.relu(self.norm_a(params, ops.conv2d(
            x, params[f"{self.prefix}.conv_a.weight"])))
        return ops.relu(self.norm_b(params, ops.conv2d(
            y, params[f"{self.prefix}.conv_b.weight"])))


class _PlainStage:
    """Transposed-conv 2x upsampling, skip concat, double conv."""

    def __init__(self, store, prefix, c_in, c_skip, c_out, rng, dtype):
        self.prefix = prefix
        store.register(f"{prefix}.tc.weight", Tensor(
            he_normal(rng, (c_in, c_out, 2, 2), fan_in=c_in * 4, dtype=dtype)))
        store.register(f"{prefix}.tc.bias", Tensor(np.zeros(c_out, dtype=dtype)))
        self.conv = _DoubleConv(store, f"{prefix}", c_out + c_skip, c_out, rng, dtype)

    def __call__(self, params, x, skip):
        up = ops.transposed_conv2d(x, params[f"{self.prefix}.tc.weight"],
                                   params[f"{self.prefix}.tc.bias"], stride=2)
        if skip is not None:
            up = ops.concat_channels([up, skip])
        return self.conv(params, up)


class _FancyStage:
    """Anti-aliased upsample block, skip concat, multi-receptive conv block."""

    def __init__(self, store, prefix, c_in, c_skip, c_out, bank, fusion, rng, dtype):
        self.up = UpsampleBlock(store, f"{prefix}.up", c_in, c_out, bank, rng,
                                fusion=fusion, dtype=dtype)
        self.conv = ConvBlock(store, f"{prefix}.conv", c_out + c_skip, c_out,
                              rng, dtype)

    def __call__(self, params, x, skip):
        up = self.up(params, x)
        if skip is not None:
            up = ops.concat_channels([up, skip])
        return self.conv(params, up)


class ModelGraph:
    """Static layer structure; all learnable state lives in the store."""

    def __init__(self, config: ModelConfig, store: ParameterStore,
                 dtype=DEFAULT_DTYPE):
        config.validate()
        self.config = config
        self.dtype = dtype
        rng = np.random.default_rng(config.seed)
        g = config.growth_rate
        attention_on = config.variant != "baseline_unet_densenet"
        fancy_decoder = config.variant == "full"

        self.stem = _Stem(store, "encoder.stem", config.input_channels,
                          config.stem_channels(), rng, dtype)
        self.blocks: list[_DenseBlock] = []
        self.transitions: list[_Transition] = []
        c = config.stem_channels()
        for b, layers in enumerate(config.block_layers):
            self.blocks.append(_DenseBlock(
                store, f"encoder.block{b + 1}", c, layers, g, rng, dtype))
            c += layers * g
            if b < 3:
                self.transitions.append(
                    _Transition(store, f"encoder.trans{b + 1}", c, rng, dtype))
                c //= 2
        bottleneck_c = c

        self.attentions: list[WaveletChannelAttention | None] = []
        skip_cs = config.skip_channels()
        if attention_on:
            learnable = config.variant in ("wgcam_lwgap", "full")
            for s, skip_c in enumerate(skip_cs[1:], start=1):
                self.attentions.append(WaveletChannelAttention(
                    store, f"wgcam.{s}", skip_c, config.wgcam_reduction, rng,
                    learnable_gain=learnable, dtype=dtype))

        self.filter_bank = FixedFilterBank(config.gaussian_sigma)
        if fancy_decoder:
            self.bottleneck = ConvBlock(store, "bottleneck", bottleneck_c,
                                        bottleneck_c, rng, dtype)
        else:
            self.bottleneck = _DoubleConv(store, "bottleneck", bottleneck_c,
                                          bottleneck_c, rng, dtype)

        # Stage i consumes the skip taps deepest-first; the last stage
        # returns to input resolution with no skip.
        stage_skips = [skip_cs[3], skip_cs[2], skip_cs[1], skip_cs[0], 0]
        self.stages = []
        c_in = bottleneck_c
        for i, (c_skip, c_out) in enumerate(zip(stage_skips, config.decoder_widths)):
            prefix = f"decoder.stage{i + 1}"
            if fancy_decoder:
                stage = _FancyStage(store, prefix, c_in, c_skip, c_out,
                                    self.filter_bank, config.upsample_fusion,
                                    rng, dtype)
            else:
                stage = _PlainStage(store, prefix, c_in, c_skip, c_out, rng, dtype)
            self.stages.append(stage)
            c_in = c_out

        store.register("head.weight", Tensor(
            he_normal(rng, (1, c_in, 1, 1), fan_in=c_in, dtype=dtype)))
        store.register("head.bias", Tensor(np.zeros(1, dtype=dtype)))

    def forward(self, params: ParameterStore, x: Tensor,
                taps: dict | None = None) -> Tensor:
        """Segmentation probabilities (n, 1, h, w), each value in (0, 1)."""
        cfg = self.config
        expected = (cfg.input_channels, *cfg.input_size)
        if x.ndim != 4 or tuple(x.shape[1:]) != expected:
            raise ShapeError(
                f"forward: input shape {x.shape} does not match configured "
                f"(n, {expected[0]}, {expected[1]}, {expected[2]})")

        stem_feat = self.stem.features(params, x)
        skips = [stem_feat]
        feat = self.stem.pool(stem_feat)
        for b, block in enumerate(self.blocks):
            feat = block(params, feat)
            if b < 3:
                skips.append(feat)
                feat = self.transitions[b](params, feat)
        if taps is not None:
            taps["ELS"] = feat.data

        if self.attentions:
            for s, gate in enumerate(self.attentions, start=1):
                if taps is not None:
                    taps[f"DWT-{s}"] = dwt_haar_forward(skips[s]).tensor.data
                skips[s] = gate(params, skips[s])

        feat = self.bottleneck(params, feat)
        if taps is not None:
            taps["BOT"] = feat.data

        stage_skips = [skips[3], skips[2], skips[1], skips[0], None]
        for stage, skip in zip(self.stages, stage_skips):
            feat = stage(params, feat, skip)
        if taps is not None:
            taps["DLS"] = feat.data

        logits = ops.conv2d(feat, params["head.weight"], params["head.bias"])
        return ops.sigmoid(logits)

    def __call__(self, params: ParameterStore, x: Tensor) -> Tensor:
        return self.forward(params, x)


def build_model(config: ModelConfig,
                dtype=DEFAULT_DTYPE) -> tuple[ParameterStore, ModelGraph]:
    """Deterministically named and initialized (store, graph) pair.

    The same (config, seed) always yields bit-identical parameters.
    """
    store = ParameterStore()
    graph = ModelGraph(config, store, dtype=dtype)
    return store, graph


def _subband_mosaic(dwt_data: np.ndarray) -> np.ndarray:
    """2x2 tile of channel-mean subbands [LL | LH / HL | HH], each min-max
    normalized on its own (zero-range tiles render as black)."""
    c = dwt_data.shape[1] // 4
    tiles = []
    for i in range(4):
        band = dwt_data[0, i * c:(i + 1) * c].mean(axis=0)
        tiles.append(normalize_map(band))
    top = np.concatenate([tiles[0], tiles[1]], axis=1)
    bottom = np.concatenate([tiles[2], tiles[3]], axis=1)
    return np.concatenate([top, bottom], axis=0)


def dump_intermediates(graph: ModelGraph, params: ParameterStore, x: Tensor,
                       out_dir) -> list[Path]:
    """Write per-scale wavelet features and key maps as grayscale PNGs.

    Emits DWT-1..3 (one mosaic of the four Haar subbands per gated skip;
    only for variants with attention gates), plus ELS / BOT / DLS: the
    deepest encoder features, the bottleneck output, and the last decoder
    features, each rendered as the channel mean, min-max normalized.
    Re-running on identical inputs produces byte-identical files.
    """
    out = ensure_dir(out_dir)
    taps: dict[str, np.ndarray] = {}
    graph.forward(params, x, taps=taps)
    written = []
    for name in ("DWT-1", "DWT-2", "DWT-3"):
        if name in taps:
            path = out / f"{name}.png"
            save_grayscale_png(path, _subband_mosaic(taps[name]))
            written.append(path)
    for name in ("ELS", "BOT", "DLS"):
        path = out / f"{name}.png"
        save_grayscale_png(path, normalize_map(taps[name][0].mean(axis=0)))
        written.append(path)
    return written
