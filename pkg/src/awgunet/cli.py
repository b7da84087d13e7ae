"""Command-line interface: train, eval, predict, inspect, selftest.

Configuration precedence is profile defaults < config file < flags; the
resolved values are written to ``<out>/manifest.cfg`` before any training
step, and that manifest is itself a valid ``--config`` file, so a run can
be reproduced exactly in deterministic mode.

Exit codes: 0 success, 1 selftest or property failure (including partial
predict output), 2 usage/config errors, 3 numerical abort during
training.  The environment variable AWGU_THREADS caps evaluation
parallelism (deterministic mode forces 1).
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import __version__
from .checkpoint import load_checkpoint, save_checkpoint
from .configfile import manifest_text, read_config_file, resolve_configs
from .data import (load_dataset, load_split_dirs, make_synthetic_blobs,
                   split_dataset)
from .exceptions import ConfigError, NumericalAbort
from .model import ModelConfig, dump_intermediates, resolve_variant
from .pngio import ensure_dir, load_image_array
from .autodiff import Tensor
from .selftest import run_selftest
from .training import TrainConfig, evaluate_model, predict, train

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_NUMERIC = 3

VERSION_STRING = f"awgunet-{__version__}"


def _add_override_flags(parser: argparse.ArgumentParser) -> None:
    """Flags mirroring every model/training config key (flag beats file)."""
    grp = parser.add_argument_group("model config overrides")
    grp.add_argument("--variant", help="ablation variant: i|ii|iii|iv or full names")
    grp.add_argument("--input-size", help="HxW (or one number for square), e.g. 512x512")
    grp.add_argument("--input-channels", type=int)
    grp.add_argument("--growth-rate", type=int)
    grp.add_argument("--block-layers", help="comma list, e.g. 6,12,24,16")
    grp.add_argument("--decoder-widths", help="comma list of 5 even widths")
    grp.add_argument("--wgcam-reduction", type=int)
    grp.add_argument("--gaussian-sigma", type=float)
    grp.add_argument("--upsample-fusion", choices=("mean", "concat"))
    grp.add_argument("--seed", type=int, help="model init seed")

    grp = parser.add_argument_group("training config overrides")
    grp.add_argument("--lr", type=float)
    grp.add_argument("--batch-size", type=int)
    grp.add_argument("--epochs", type=int)
    grp.add_argument("--train-seed", type=int)
    grp.add_argument("--w-dice", type=float)
    grp.add_argument("--w-bce", type=float)
    grp.add_argument("--log-every", type=int)
    det = grp.add_mutually_exclusive_group()
    det.add_argument("--deterministic", dest="deterministic",
                     action="store_true", default=None)
    det.add_argument("--no-deterministic", dest="deterministic",
                     action="store_false")


def _collect_overrides(args) -> dict[str, str]:
    mapping: dict[str, str] = {}

    def put(key, value):
        if value is not None:
            mapping[key] = str(value)

    if args.variant is not None:
        mapping["variant"] = resolve_variant(args.variant)
    if args.input_size is not None:
        parts = args.input_size.lower().split("x")
        try:
            if len(parts) == 1:
                h = w = int(parts[0])
            elif len(parts) == 2:
                h, w = int(parts[0]), int(parts[1])
            else:
                raise ValueError
        except ValueError:
            raise ConfigError(
                f"--input-size must be N or HxW, got {args.input_size!r}") from None
        mapping["input_h"], mapping["input_w"] = str(h), str(w)
    put("input_channels", args.input_channels)
    put("growth_rate", args.growth_rate)
    put("block_layers", args.block_layers)
    put("decoder_widths", args.decoder_widths)
    put("wgcam_reduction", args.wgcam_reduction)
    put("gaussian_sigma", args.gaussian_sigma)
    put("seed", args.seed)
    put("upsample_fusion", args.upsample_fusion)
    put("lr", args.lr)
    put("batch_size", args.batch_size)
    put("epochs", args.epochs)
    put("train_seed", args.train_seed)
    put("w_dice", args.w_dice)
    put("w_bce", args.w_bce)
    put("log_every", args.log_every)
    if args.deterministic is not None:
        mapping["deterministic"] = str(int(args.deterministic))
    return mapping


def _resolve(args):
    base: dict[str, str] = {}
    if args.profile == "desk":
        base.update(ModelConfig.desk_profile().to_mapping())
    if args.config:
        base.update(read_config_file(args.config))
    return resolve_configs(base, _collect_overrides(args))


def _parse_fractions(text: str) -> tuple[float, float, float]:
    try:
        parts = tuple(float(v) for v in text.split(","))
    except ValueError:
        raise ConfigError(f"--fractions must be three numbers, got {text!r}") from None
    if len(parts) != 3:
        raise ConfigError(f"--fractions must have 3 entries, got {text!r}")
    return parts


def _load_training_data(args, run_values, model_config):
    """Returns (train_pairs, val_pairs) from the selected source."""
    blobs = args.synthetic_blobs or run_values.get("synthetic_blobs")
    data_root = args.data or run_values.get("data")
    split_mode = args.split_mode or run_values.get("split_mode", "fractions")
    fractions = _parse_fractions(args.fractions or
                                 run_values.get("fractions", "0.7,0.2,0.1"))
    if blobs:
        count = int(blobs)
        h, w = model_config.input_size
        if h != w:
            raise ConfigError("synthetic blobs need a square input size")
        pairs = make_synthetic_blobs(count, h, seed=model_config.seed)
        if count >= 3 and all(f > 0 for f in fractions):
            split = split_dataset(pairs, fractions, seed=model_config.seed)
            return split.subset(pairs, "train"), split.subset(pairs, "val")
        return pairs, []
    if not data_root:
        raise ConfigError("no training data: pass --data <root> or --synthetic-blobs N")
    if split_mode == "predefined-dirs":
        splits = load_split_dirs(data_root)
        return splits["train"], splits["val"]
    if split_mode != "fractions":
        raise ConfigError(
            f"split mode must be 'fractions' or 'predefined-dirs', got {split_mode!r}")
    root = Path(data_root)
    pairs = load_dataset(root / "images", root / "masks")
    split = split_dataset(pairs, fractions, seed=model_config.seed)
    return split.subset(pairs, "train"), split.subset(pairs, "val")


def cmd_train(args) -> int:
    model_config, train_config, run_values = _resolve(args)
    out_dir = ensure_dir(args.out or run_values.get("out", "awgunet-run"))
    train_pairs, val_pairs = _load_training_data(args, run_values, model_config)

    recorded = dict(run_values)
    if args.data:
        recorded["data"] = args.data
    if args.synthetic_blobs:
        recorded["synthetic_blobs"] = str(args.synthetic_blobs)
    recorded["out"] = str(out_dir)
    (out_dir / "manifest.cfg").write_text(
        manifest_text(model_config, train_config, recorded, VERSION_STRING))

    train_config.checkpoint_dir = str(out_dir)
    best, history = train(model_config, train_config, train_pairs, val_pairs,
                          log=lambda msg: print(msg))
    history.to_csv(out_dir / "history.csv")
    save_checkpoint(out_dir / "best.awgu", model_config, best.store,
                    step=best.step, include_optimizer=True)
    print(f"wrote {out_dir / 'best.awgu'} (best step {best.step}) "
          f"and {out_dir / 'history.csv'}")
    return EXIT_OK


def cmd_eval(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    root = Path(args.data)
    pairs = load_dataset(root / "images", root / "masks")
    report = evaluate_model(ckpt, pairs, threshold=args.threshold,
                            deterministic=args.deterministic is not False)
    print(report.to_text())
    out_dir = ensure_dir(args.out or ".")
    csv_path = out_dir / "metrics.csv"
    report.to_csv(csv_path)
    print(f"wrote {csv_path}")
    return EXIT_OK


def cmd_predict(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    summary = predict(ckpt, args.images, args.out, threshold=args.threshold,
                      log=lambda msg: print(msg, file=sys.stderr))
    print(f"wrote {len(summary.written)} masks to {args.out}"
          + (f", skipped {len(summary.skipped)}" if summary.skipped else ""))
    return EXIT_OK if summary.ok else EXIT_FAILURE


def cmd_inspect(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    image = Tensor(load_image_array(args.image)[None])
    files = dump_intermediates(ckpt.graph, ckpt.store, image, args.out)
    for path in files:
        print(path)
    return EXIT_OK


def cmd_selftest(args) -> int:
    results = run_selftest(quick=args.quick)
    failures = [r.name for r in results if not r.passed]
    if failures:
        print(f"selftest FAILED: {', '.join(failures)}")
        return EXIT_FAILURE
    print("selftest passed")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="awgunet",
        description="Wavelet-guided attention U-Net for nuclei segmentation",
        epilog="AWGU_THREADS caps evaluation parallelism (ignored in "
               "deterministic mode).")
    parser.add_argument("--version", action="version", version=VERSION_STRING)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model and keep the best checkpoint")
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--profile", choices=("full", "desk"), default="full",
                   help="baseline defaults before file/flag overrides")
    p.add_argument("--data", help="dataset root containing images/ and masks/")
    p.add_argument("--synthetic-blobs", type=int, metavar="N",
                   help="train on N generated blob samples instead of --data")
    p.add_argument("--split-mode", choices=("fractions", "predefined-dirs"))
    p.add_argument("--fractions", help="train,val,test fractions (default 0.7,0.2,0.1)")
    p.add_argument("--out", help="output directory (default awgunet-run)")
    _add_override_flags(p)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True,
                   help="dataset root containing images/ and masks/")
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--out", help="directory for metrics.csv (default .)")
    det = p.add_mutually_exclusive_group()
    det.add_argument("--deterministic", dest="deterministic",
                     action="store_true", default=None)
    det.add_argument("--no-deterministic", dest="deterministic",
                     action="store_false")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("predict", help="write binary mask PNGs for a directory")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--images", required=True, help="directory of input PNGs")
    p.add_argument("--out", required=True)
    p.add_argument("--threshold", type=float, default=0.5)
    p.set_defaults(fn=cmd_predict)

    p = sub.add_parser("inspect",
                       help="dump wavelet/encoder/decoder feature maps as PNGs")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True, help="one input PNG")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_inspect)

    p = sub.add_parser("selftest", help="run the built-in verification suite")
    p.add_argument("--quick", action="store_true",
                   help="skip the overfit smoke run")
    p.set_defaults(fn=cmd_selftest)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalAbort as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
