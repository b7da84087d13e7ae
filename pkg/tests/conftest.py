"""Shared fixtures: the toy corpus and the two 300-step overfit runs.

The overfit runs are the expensive part of the suite (~1 minute total),
so they execute once per session and feed the training tests, the CLI
tests, and the acceptance suite.
"""

import numpy as np
import pytest

from awgunet.checkpoint import save_checkpoint
from awgunet.data import make_synthetic_blobs
from awgunet.model import ModelConfig
from awgunet.training import TrainConfig, train

OVERFIT_STEPS = 300
BLOB_SEED = 11


@pytest.fixture(scope="session")
def blob_corpus():
    return make_synthetic_blobs(4, 64, seed=BLOB_SEED)


def _run_overfit(variant, pairs, tmp_path_factory):
    model_cfg = ModelConfig.desk_profile(variant=variant, seed=0)
    train_cfg = TrainConfig(epochs=OVERFIT_STEPS // 2, seed=0)  # 2 steps/epoch
    best, history = train(model_cfg, train_cfg, pairs)
    out = tmp_path_factory.mktemp(f"overfit-{variant}")
    ckpt_path = out / "best.awgu"
    save_checkpoint(ckpt_path, model_cfg, best.store, step=best.step,
                    include_optimizer=True)
    return {
        "variant": variant,
        "config": model_cfg,
        "best": best,
        "history": history,
        "ckpt_path": ckpt_path,
        "pairs": pairs,
    }


@pytest.fixture(scope="session")
def overfit_full(blob_corpus, tmp_path_factory):
    """Variant (iv) trained 300 steps at the paper defaults (lr 1e-4, batch 2)."""
    return _run_overfit("full", blob_corpus, tmp_path_factory)


@pytest.fixture(scope="session")
def overfit_baseline(blob_corpus, tmp_path_factory):
    """Variant (i) under the identical training budget."""
    return _run_overfit("baseline_unet_densenet", blob_corpus, tmp_path_factory)


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
