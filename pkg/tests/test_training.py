"""Training loop: overfit behavior, determinism, abort, persistence."""

import numpy as np
import pytest

from awgunet.autodiff import Tensor
from awgunet.checkpoint import load_checkpoint, save_checkpoint
from awgunet.data import SamplePair, make_synthetic_blobs
from awgunet.exceptions import ConfigError, NumericalAbort
from awgunet.metrics import binarize
from awgunet.model import ModelConfig
from awgunet.pngio import save_grayscale_png
from awgunet.training import (TrainConfig, evaluate_model, predict,
                              thread_count, train)


def test_train_config_validation():
    with pytest.raises(ConfigError, match="epochs"):
        TrainConfig(epochs=0).validate()
    with pytest.raises(ConfigError, match="lr"):
        TrainConfig(lr=0.0).validate()
    with pytest.raises(ConfigError, match="batch_size"):
        TrainConfig(batch_size=0).validate()
    TrainConfig().validate()


def test_overfit_reaches_high_dice(overfit_full):
    report = evaluate_model(overfit_full["best"], overfit_full["pairs"])
    assert report.aggregate["dice"] >= 0.95


def test_baseline_trains_under_same_budget(overfit_baseline):
    report = evaluate_model(overfit_baseline["best"], overfit_baseline["pairs"])
    assert report.aggregate["dice"] >= 0.85


def test_loss_trend_nonincreasing_windows(overfit_full):
    # Mean over [k, k+50) must not sit below mean over [k+50, k+100) by
    # more than the 0.02 noise allowance, for every k >= 50.
    losses = overfit_full["history"].step_losses
    assert len(losses) == 300
    for k in range(50, len(losses) - 100 + 1):
        first = float(np.mean(losses[k:k + 50]))
        second = float(np.mean(losses[k + 50:k + 100]))
        assert first >= second - 0.02, f"window at k={k}: {first} < {second}"


def test_history_csv_written(overfit_full, tmp_path):
    path = tmp_path / "history.csv"
    overfit_full["history"].to_csv(path)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "epoch,train_loss,val_dice,val_iou"
    assert len(lines) == 1 + len(overfit_full["history"].epochs)


def test_two_seeded_runs_bit_identical_losses():
    pairs = make_synthetic_blobs(4, 64, seed=11)

    def run():
        _, history = train(ModelConfig.desk_profile(variant="i", seed=0),
                           TrainConfig(epochs=5, seed=0), pairs)
        return history.step_losses

    a, b = run(), run()
    assert a == b  # bit-identical loss curves


def test_validation_checkpointing_tracks_best(tmp_path):
    pairs = make_synthetic_blobs(6, 64, seed=13)
    cfg = ModelConfig.desk_profile(variant="i", seed=0)
    tcfg = TrainConfig(epochs=4, seed=0, checkpoint_dir=str(tmp_path))
    best, history = train(cfg, tcfg, pairs[:4], val_pairs=pairs[4:])
    assert (tmp_path / "best.awgu").exists()
    assert len(history.epochs) == 4
    assert not np.isnan(history.epochs[0].val_dice)
    report = evaluate_model(best, pairs[4:])
    best_epoch_dice = max(rec.val_dice for rec in history.epochs)
    assert abs(report.aggregate["dice"] - best_epoch_dice) < 1e-12


def test_nan_input_aborts_with_step(tmp_path):
    pairs = make_synthetic_blobs(2, 64, seed=14)
    poisoned = pairs[0].image.data.copy()
    poisoned[0, 0, 0, 0] = np.nan
    bad = [SamplePair(id="bad", image=Tensor(poisoned), mask=pairs[0].mask),
           pairs[1]]
    with pytest.raises(NumericalAbort, match="step 1"):
        train(ModelConfig.desk_profile(variant="i", seed=0),
              TrainConfig(epochs=1, seed=0), bad)


def test_empty_training_set_rejected():
    with pytest.raises(ConfigError, match="empty"):
        train(ModelConfig.desk_profile(variant="i"), TrainConfig(epochs=1), [])


def test_evaluate_empty_subset_rejected(overfit_full):
    with pytest.raises(ConfigError, match="empty"):
        evaluate_model(overfit_full["best"], [])


def test_checkpoint_reproduces_metrics_exactly(overfit_full, tmp_path):
    best = overfit_full["best"]
    pairs = overfit_full["pairs"]
    want = evaluate_model(best, pairs)
    loaded = load_checkpoint(overfit_full["ckpt_path"])
    got = evaluate_model(loaded, pairs)
    for a, b in zip(want.per_image, got.per_image):
        assert a.values() == b.values()


def test_threshold_monotonicity(overfit_full):
    best = overfit_full["best"]
    pairs = overfit_full["pairs"]
    thresholds = (0.1, 0.3, 0.5, 0.7, 0.9)
    for pair in pairs:
        prob = best.graph.forward(best.store, pair.image).data
        prev_pos = None
        prev_recall = None
        for th in thresholds:
            pos = int(binarize(prob, th).sum())
            recall = evaluate_model(best, [pair], threshold=th) \
                .per_image[0].recall
            if prev_pos is not None:
                assert pos <= prev_pos
                assert recall <= prev_recall + 1e-12
            prev_pos, prev_recall = pos, recall


def test_predict_writes_masks(overfit_full, tmp_path):
    best = overfit_full["best"]
    img_dir = tmp_path / "imgs"
    img_dir.mkdir()
    for pair in overfit_full["pairs"][:2]:
        rgb = pair.image.data[0].mean(axis=0)
        save_grayscale_png(img_dir / f"{pair.id}.png", rgb)
    out_dir = tmp_path / "masks"
    summary = predict(best, img_dir, out_dir, threshold=0.5)
    assert summary.ok and len(summary.written) == 2
    first = {(out_dir / n).name: (out_dir / n).read_bytes()
             for n in summary.written}
    summary2 = predict(best, img_dir, out_dir, threshold=0.5)
    second = {(out_dir / n).name: (out_dir / n).read_bytes()
              for n in summary2.written}
    assert first == second  # rerun byte-identical


def test_predict_threshold_extremes(overfit_full, tmp_path):
    best = overfit_full["best"]
    pair = overfit_full["pairs"][0]
    prob = best.graph.forward(best.store, pair.image).data
    full = binarize(prob, 1e-6).mean()
    empty = binarize(prob, 1.0 - 1e-6).mean()
    assert full > 0.95 and empty < 0.05


def test_predict_skips_unreadable(overfit_full, tmp_path):
    img_dir = tmp_path / "imgs"
    img_dir.mkdir()
    pair = overfit_full["pairs"][0]
    save_grayscale_png(img_dir / "good.png", pair.image.data[0].mean(axis=0))
    (img_dir / "broken.png").write_bytes(b"not a png")
    warnings = []
    summary = predict(overfit_full["best"], img_dir, tmp_path / "out",
                      threshold=0.5, log=warnings.append)
    assert summary.written == ["good.png"]
    assert summary.skipped == ["broken.png"]
    assert not summary.ok
    assert any("broken" in w for w in warnings)


def test_thread_count_env(monkeypatch):
    monkeypatch.setenv("AWGU_THREADS", "4")
    assert thread_count(deterministic=False) == 4
    assert thread_count(deterministic=True) == 1
    monkeypatch.setenv("AWGU_THREADS", "junk")
    assert thread_count(deterministic=False) == 1


def test_parallel_evaluation_matches_sequential(overfit_full, monkeypatch):
    best = overfit_full["best"]
    pairs = overfit_full["pairs"]
    seq = evaluate_model(best, pairs, deterministic=True)
    monkeypatch.setenv("AWGU_THREADS", "4")
    par = evaluate_model(best, pairs, deterministic=False)
    for a, b in zip(seq.per_image, par.per_image):
        assert a.values() == b.values()
