"""Training and evaluation orchestration.

``train`` runs the full protocol: shuffled mini-batches, combined
dice+BCE loss, Adam updates, per-epoch validation, and best-checkpoint
retention by validation dice.  It aborts with a diagnostic on the first
non-finite loss rather than training onward from garbage.

Deterministic mode (the default, and mandatory for tests) keeps all
per-image evaluation sequential; otherwise evaluation fans out over a
small thread pool sized by the AWGU_THREADS environment variable.
Per-image metrics are independent, so the thread count never changes
results.
"""

from __future__ import annotations

import csv
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .autodiff import GradientTape, Tensor
from .checkpoint import CheckpointData, save_checkpoint
from .data import SamplePair, batches
from .exceptions import ConfigError, NumericalAbort
from .losses import combined_loss
from .metrics import MetricsReport, evaluate_pair
from .model import ModelConfig, ModelGraph, build_model
from .optim import ParameterStore, adam_step
from .pngio import ensure_dir, load_image_array, save_mask_png


def thread_count(deterministic: bool = False) -> int:
    """Worker cap for embarrassingly parallel evaluation (AWGU_THREADS)."""
    if deterministic:
        return 1
    try:
        return max(1, int(os.environ.get("AWGU_THREADS", "1")))
    except ValueError:
        return 1


@dataclass
class TrainConfig:
    lr: float = 1e-4
    batch_size: int = 2
    epochs: int = 100
    seed: int = 0
    w_dice: float = 1.0
    w_bce: float = 1.0
    checkpoint_dir: str | None = None
    log_every: int = 10
    deterministic: bool = True

    def validate(self) -> None:
        if self.lr <= 0:
            raise ConfigError(f"lr must be > 0, got {self.lr}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.w_dice < 0 or self.w_bce < 0:
            raise ConfigError("loss weights must be >= 0")
        if self.log_every < 1:
            raise ConfigError("log_every must be >= 1")

    def to_mapping(self) -> dict[str, str]:
        return {
            "lr": repr(self.lr),
            "batch_size": str(self.batch_size),
            "epochs": str(self.epochs),
            "train_seed": str(self.seed),
            "w_dice": repr(self.w_dice),
            "w_bce": repr(self.w_bce),
            "log_every": str(self.log_every),
            "deterministic": str(int(self.deterministic)),
        }

    @classmethod
    def from_mapping(cls, mapping: dict[str, str]) -> "TrainConfig":
        cfg = cls()
        known = cfg.to_mapping().keys()
        unknown = set(mapping) - set(known)
        if unknown:
            raise ConfigError(f"unknown training config keys: {sorted(unknown)}")

        def get(key, parse, default):
            if key not in mapping:
                return default
            try:
                return parse(mapping[key])
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"bad value for {key!r}: {mapping[key]!r}") from exc

        cfg = cls(
            lr=get("lr", float, cfg.lr),
            batch_size=get("batch_size", int, cfg.batch_size),
            epochs=get("epochs", int, cfg.epochs),
            seed=get("train_seed", int, cfg.seed),
            w_dice=get("w_dice", float, cfg.w_dice),
            w_bce=get("w_bce", float, cfg.w_bce),
            log_every=get("log_every", int, cfg.log_every),
            deterministic=get("deterministic", lambda s: bool(int(s)),
                              cfg.deterministic),
        )
        cfg.validate()
        return cfg


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_dice: float
    val_iou: float


@dataclass
class TrainHistory:
    epochs: list[EpochRecord] = field(default_factory=list)
    step_losses: list[float] = field(default_factory=list)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "train_loss", "val_dice", "val_iou"])
            for rec in self.epochs:
                writer.writerow([rec.epoch, f"{rec.train_loss:.6f}",
                                 f"{rec.val_dice:.6f}", f"{rec.val_iou:.6f}"])


def _forward_prob(graph: ModelGraph, store: ParameterStore,
                  pair: SamplePair) -> np.ndarray:
    return graph.forward(store, pair.image).data


def _evaluate_pairs(graph: ModelGraph, store: ParameterStore,
                    pairs: Sequence[SamplePair], threshold: float,
                    workers: int) -> MetricsReport:
    report = MetricsReport(threshold=threshold)
    if workers > 1 and len(pairs) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            probs = list(pool.map(
                lambda p: _forward_prob(graph, store, p), pairs))
    else:
        probs = [_forward_prob(graph, store, p) for p in pairs]
    for pair, prob in zip(pairs, probs):
        report.per_image.append(
            evaluate_pair(prob, pair.mask, threshold=threshold, pair_id=pair.id))
    return report


def train(model_config: ModelConfig, train_config: TrainConfig,
          train_pairs: Sequence[SamplePair],
          val_pairs: Sequence[SamplePair] = (),
          max_steps: int | None = None,
          augment: Callable[[SamplePair], SamplePair] | None = None,
          log: Callable[[str], None] | None = None,
          ) -> tuple[CheckpointData, TrainHistory]:
    """Run the training protocol; returns the best checkpoint and history.

    The "best" snapshot maximizes validation dice (evaluated each epoch at
    threshold 0.5); with no validation set the lowest train loss wins.
    ``max_steps``, when given, truncates training after that many Adam
    steps regardless of the epoch budget.
    """
    model_config.validate()
    train_config.validate()
    if not train_pairs:
        raise ConfigError("train: empty training set")

    store, graph = build_model(model_config)
    rng = np.random.default_rng(train_config.seed)
    history = TrainHistory()
    workers = thread_count(train_config.deterministic)

    best_store: ParameterStore | None = None
    best_key: tuple | None = None
    best_step = 0
    ckpt_dir = Path(train_config.checkpoint_dir) if train_config.checkpoint_dir else None
    if ckpt_dir:
        ensure_dir(ckpt_dir)

    step = 0
    done = False
    for epoch in range(1, train_config.epochs + 1):
        epoch_losses = []
        for images, masks, _ids in batches(train_pairs, train_config.batch_size,
                                           rng=rng, augment=augment):
            step += 1
            with GradientTape() as tape:
                loss = combined_loss(graph.forward(store, images), masks,
                                     w_dice=train_config.w_dice,
                                     w_bce=train_config.w_bce)
            value = loss.item()
            if not np.isfinite(value):
                raise NumericalAbort(
                    f"non-finite loss ({value}) first produced at step {step} "
                    f"(epoch {epoch}); aborting before the update")
            tape.backward(loss)
            adam_step(store, lr=train_config.lr, t=step)
            epoch_losses.append(value)
            history.step_losses.append(value)
            if log and step % train_config.log_every == 0:
                log(f"step {step}: loss {value:.4f}")
            if max_steps is not None and step >= max_steps:
                done = True
                break

        train_loss = float(np.mean(epoch_losses)) if epoch_losses else float("nan")
        val_dice = val_iou = float("nan")
        if val_pairs:
            report = _evaluate_pairs(graph, store, val_pairs, 0.5, workers)
            agg = report.aggregate
            val_dice, val_iou = agg["dice"], agg["iou"]
            key = (val_dice,)
        else:
            key = (-train_loss,)
        history.epochs.append(EpochRecord(epoch, train_loss, val_dice, val_iou))
        if log:
            log(f"epoch {epoch}: train loss {train_loss:.4f}"
                + (f", val dice {val_dice:.4f}" if val_pairs else ""))

        if best_key is None or key > best_key:
            best_key = key
            best_store = store.clone()
            best_step = step
            if ckpt_dir:
                save_checkpoint(ckpt_dir / "best.awgu", model_config, best_store,
                                step=best_step, include_optimizer=True)
        if done:
            break

    assert best_store is not None
    _, best_graph = build_model(model_config)
    best = CheckpointData(config=model_config, store=best_store,
                          graph=best_graph, step=best_step)
    return best, history


def evaluate_model(ckpt: CheckpointData, pairs: Sequence[SamplePair],
                   threshold: float = 0.5,
                   deterministic: bool = True) -> MetricsReport:
    """Per-image and aggregate metrics; never mutates parameters."""
    if not pairs:
        raise ConfigError("evaluate_model: empty dataset subset")
    if not 0.0 < threshold < 1.0:
        raise ConfigError(f"threshold must be in (0, 1), got {threshold}")
    return _evaluate_pairs(ckpt.graph, ckpt.store, pairs, threshold,
                           thread_count(deterministic))


@dataclass
class PredictSummary:
    written: list[str]
    skipped: list[str]

    @property
    def ok(self) -> bool:
        return not self.skipped


def predict(ckpt: CheckpointData, images_dir, out_dir,
            threshold: float = 0.5,
            log: Callable[[str], None] | None = None) -> PredictSummary:
    """Write one {0, 255} PNG mask per readable input image.

    Unreadable or wrongly-sized images are skipped with a warning and
    reported in the summary so the CLI can exit non-zero.
    """
    if not 0.0 < threshold < 1.0:
        raise ConfigError(f"threshold must be in (0, 1), got {threshold}")
    images_dir = Path(images_dir)
    if not images_dir.is_dir():
        raise ConfigError(f"images directory not found: {images_dir}")
    paths = sorted(images_dir.glob("*.png"), key=lambda p: p.stem)
    if not paths:
        raise ConfigError(f"no .png images in {images_dir}")
    out = ensure_dir(out_dir)
    summary = PredictSummary(written=[], skipped=[])
    for path in paths:
        try:
            image = Tensor(load_image_array(path)[None])
            prob = ckpt.graph.forward(ckpt.store, image)
        except Exception as exc:  # noqa: BLE001 - skip-with-warning contract
            if log:
                log(f"warning: skipping {path.name}: {exc}")
            summary.skipped.append(path.name)
            continue
        mask = (prob.data[0, 0] > threshold).astype(np.float32)
        save_mask_png(out / f"{path.stem}.png", mask)
        summary.written.append(f"{path.stem}.png")
    return summary
