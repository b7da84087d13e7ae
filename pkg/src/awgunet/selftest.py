"""Runtime self-verification suite behind ``awgunet selftest``.

Four groups of checks mirror the properties the test suite pins down:
finite-difference gradient verification of every differentiable op (in
float64), wavelet round-trip and energy-preservation exactness, agreement
of the metric implementation with a brute-force per-pixel oracle, and a
short overfit smoke run proving the training loop actually learns.

Checks reference :mod:`awgunet.ops` through the module object, so a
corrupted backward pass (e.g. monkeypatched in a mutation test) is
caught rather than shadowed by a stale local binding.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import ops
from .attention import WaveletChannelAttention
from .autodiff import Tensor
from .data import make_synthetic_blobs
from .decoder import FixedFilterBank, upsample_fixed
from .gradcheck import max_relative_error
from .losses import bce_loss, dice_loss
from .metrics import evaluate_pair, metrics_from_counts
from .model import ModelConfig
from .optim import ParameterStore
from .training import TrainConfig, train
from .wavelet import dwt_haar_forward, dwt_haar_inverse

GRAD_TOL = 1e-3
EXACT_TOL = 1e-6


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float


def _t(rng, shape):
    return Tensor(rng.standard_normal(shape), dtype=np.float64)


def _objective(t: Tensor, key: int = 0) -> Tensor:
    """Fixed random-weighted sum so every output element is exercised.

    The weights are a pure function of (key, shape): finite-difference
    re-evaluations must see the exact same objective.
    """
    weights = Tensor(np.random.default_rng(1000 + key).standard_normal(t.shape),
                     dtype=np.float64)
    return ops.sum_all(ops.mul_elementwise(t, weights))


def _gradient_cases(rng):
    """(name, fn, wrt) triples covering every differentiable operation."""
    cases = []

    x = _t(rng, (2, 3, 8, 8))
    w = _t(rng, (2, 3, 3, 3))
    b = _t(rng, (2,))
    cases.append(("conv2d", lambda: _objective(
        ops.conv2d(x, w, b, stride=1, padding="same"), key=1), [x, w, b]))

    xs = _t(rng, (2, 3, 6, 6))
    ws = _t(rng, (2, 3, 3, 3))
    cases.append(("conv2d stride-2 valid", lambda: _objective(
        ops.conv2d(xs, ws, None, stride=2, padding="valid"), key=2), [xs, ws]))

    xd = _t(rng, (1, 3, 6, 6))
    dw = _t(rng, (3, 1, 3, 3))
    pw = _t(rng, (2, 3, 1, 1))
    bs = _t(rng, (2,))
    cases.append(("separable_conv2d", lambda: _objective(
        ops.separable_conv2d(xd, dw, pw, bs), key=3), [xd, dw, pw, bs]))

    xt = _t(rng, (2, 2, 4, 4))
    wt = _t(rng, (2, 3, 2, 2))
    bt = _t(rng, (3,))
    cases.append(("transposed_conv2d", lambda: _objective(
        ops.transposed_conv2d(xt, wt, bt, stride=2), key=4), [xt, wt, bt]))

    xm = _t(rng, (3, 5))
    wm = _t(rng, (4, 5))
    bm = _t(rng, (4,))
    cases.append(("dense", lambda: _objective(
        ops.dense(xm, wm, bm), key=5), [xm, wm, bm]))

    xn = _t(rng, (2, 3, 5, 5))
    gn = Tensor(np.random.default_rng(5).uniform(0.5, 1.5, 3), dtype=np.float64)
    bn = _t(rng, (3,))
    cases.append(("instance_norm", lambda: _objective(
        ops.instance_norm(xn, gn, bn), key=6), [xn, gn, bn]))

    # Keep values away from the ReLU kink so finite differences are clean.
    xr = Tensor(rng.standard_normal((2, 2, 4, 4)), dtype=np.float64)
    xr.data[np.abs(xr.data) < 0.1] += 0.2
    cases.append(("relu", lambda: _objective(ops.relu(xr), key=7), [xr]))
    xl = Tensor(xr.data.copy(), dtype=np.float64)
    cases.append(("leaky_relu", lambda: _objective(ops.leaky_relu(xl), key=8), [xl]))

    xg = _t(rng, (2, 2, 4, 4))
    cases.append(("sigmoid", lambda: _objective(ops.sigmoid(xg), key=9), [xg]))

    xa = _t(rng, (1, 2, 4, 4))
    xb = _t(rng, (1, 3, 4, 4))
    cases.append(("concat_channels", lambda: _objective(
        ops.concat_channels([xa, xb]), key=10), [xa, xb]))

    x1 = _t(rng, (2, 2, 3, 3))
    x2 = _t(rng, (2, 2, 3, 3))
    cases.append(("add", lambda: _objective(ops.add(x1, x2), key=11), [x1, x2]))
    cases.append(("mul_elementwise", lambda: _objective(
        ops.mul_elementwise(x1, x2), key=12), [x1, x2]))

    xc = _t(rng, (2, 3, 4, 4))
    wc = _t(rng, (3,))
    cases.append(("mul_per_channel", lambda: _objective(
        ops.mul_per_channel(xc, wc), key=13), [xc, wc]))
    wc2 = _t(rng, (2, 3))
    cases.append(("mul_per_channel (n,c)", lambda: _objective(
        ops.mul_per_channel(xc, wc2), key=14), [xc, wc2]))

    xp = _t(rng, (2, 2, 6, 6))
    cases.append(("avg_pool2d", lambda: _objective(
        ops.avg_pool2d(xp, 2, 2), key=15), [xp]))
    cases.append(("max_pool2d", lambda: _objective(
        ops.max_pool2d(xp, 3, 2, padding=1), key=16), [xp]))
    cases.append(("spatial_mean", lambda: _objective(
        ops.spatial_mean(xp), key=17), [xp]))
    cases.append(("nearest_upsample2x", lambda: _objective(
        ops.nearest_upsample2x(xp), key=18), [xp]))

    xw = _t(rng, (1, 2, 6, 6))
    cases.append(("dwt_haar_forward", lambda: _objective(
        dwt_haar_forward(xw).tensor, key=19), [xw]))

    bank = FixedFilterBank()
    xu = _t(rng, (1, 2, 4, 4))
    cases.append(("upsample_fixed gaussian", lambda: _objective(
        upsample_fixed(xu, bank.gaussian), key=20), [xu]))
    cases.append(("upsample_fixed lanczos", lambda: _objective(
        upsample_fixed(xu, bank.lanczos), key=21), [xu]))

    store = ParameterStore()
    gate = WaveletChannelAttention(store, "att", channels=4, reduction=2,
                                   rng=np.random.default_rng(11), dtype=np.float64)
    xatt = _t(rng, (1, 4, 8, 8))
    wrt = [xatt] + [store[name] for name in store.names()]
    cases.append(("wavelet channel attention end-to-end", lambda: _objective(
        gate(store, xatt), key=99), wrt))

    pd = Tensor(np.random.default_rng(12).uniform(0.05, 0.95, (1, 1, 6, 6)),
                dtype=np.float64)
    tg = Tensor((np.random.default_rng(13).uniform(0, 1, (1, 1, 6, 6)) > 0.5)
                .astype(np.float64), dtype=np.float64)
    cases.append(("dice_loss", lambda: dice_loss(pd, tg), [pd]))
    cases.append(("bce_loss", lambda: bce_loss(pd, tg), [pd]))

    return cases


def check_gradients() -> CheckResult:
    start = time.time()
    rng = np.random.default_rng(42)
    failures = []
    worst = 0.0
    for name, fn, wrt in _gradient_cases(rng):
        err = max_relative_error(fn, wrt)
        worst = max(worst, err)
        if err >= GRAD_TOL:
            failures.append(f"{name} ({err:.2e})")
    detail = (f"max rel err {worst:.2e}" if not failures
              else "failed: " + ", ".join(failures))
    return CheckResult("gradient checks", not failures, detail,
                       time.time() - start)


def check_wavelet(iterations: int = 60) -> CheckResult:
    start = time.time()
    rng = np.random.default_rng(9)
    worst_rt = worst_energy = 0.0
    for _ in range(iterations):
        n = int(rng.integers(1, 3))
        c = int(rng.integers(1, 4))
        h = 2 * int(rng.integers(1, 9))
        w = 2 * int(rng.integers(1, 9))
        x = Tensor(rng.standard_normal((n, c, h, w)), dtype=np.float64)
        dec = dwt_haar_forward(x)
        rt = dwt_haar_inverse(dec)
        worst_rt = max(worst_rt, float(np.abs(rt.data - x.data).max()))
        ein = float((x.data ** 2).sum())
        eout = float((dec.tensor.data ** 2).sum())
        worst_energy = max(worst_energy, abs(eout - ein) / max(ein, 1e-30))
    ok = worst_rt < EXACT_TOL and worst_energy < EXACT_TOL
    return CheckResult(
        "wavelet round-trip / energy", ok,
        f"max round-trip {worst_rt:.2e}, max energy drift {worst_energy:.2e}",
        time.time() - start)


def brute_force_metrics(pred_bin: np.ndarray, target: np.ndarray) -> dict:
    """Per-pixel python-loop confusion counting; the independent oracle."""
    tp = fp = fn = 0
    for p, g in zip(pred_bin.ravel().tolist(), target.ravel().tolist()):
        p, g = p > 0.5, g > 0.5
        if p and g:
            tp += 1
        elif p and not g:
            fp += 1
        elif g and not p:
            fn += 1
    return metrics_from_counts(tp, fp, fn)


def check_metrics(pairs: int = 30) -> CheckResult:
    start = time.time()
    rng = np.random.default_rng(21)
    worst = 0.0
    for _ in range(pairs):
        prob = rng.uniform(0, 1, (16, 16))
        target = (rng.uniform(0, 1, (16, 16)) > rng.uniform(0.2, 0.8)).astype(float)
        got = evaluate_pair(prob, target, threshold=0.5)
        want = brute_force_metrics((prob > 0.5).astype(float), target)
        for key, value in want.items():
            worst = max(worst, abs(getattr(got, key) - value))
        if got.iou not in (0.0, 1.0):
            ident = abs(got.dice - 2 * got.iou / (1 + got.iou))
            worst = max(worst, ident)
    return CheckResult("metric oracle agreement", worst < 1e-12,
                       f"max deviation {worst:.2e}", time.time() - start)


def check_overfit_smoke(steps: int = 60) -> CheckResult:
    start = time.time()
    model_cfg = ModelConfig.desk_profile(variant="full", seed=0)
    train_cfg = TrainConfig(epochs=steps, seed=0)
    pairs = make_synthetic_blobs(2, 64, seed=11)
    _, history = train(model_cfg, train_cfg, pairs, max_steps=steps)
    first = float(np.mean(history.step_losses[:10]))
    last = float(np.mean(history.step_losses[-10:]))
    ok = last < 0.85 * first
    return CheckResult("overfit smoke run", ok,
                       f"loss {first:.3f} -> {last:.3f} over {steps} steps",
                       time.time() - start)


def run_selftest(quick: bool = False,
                 log: Callable[[str], None] = print) -> list[CheckResult]:
    checks = [check_gradients, check_wavelet, check_metrics]
    if not quick:
        checks.append(check_overfit_smoke)
    results = []
    for check in checks:
        result = check()
        results.append(result)
        status = "PASS" if result.passed else "FAIL"
        log(f"[{status}] {result.name:<32} {result.detail} "
            f"({result.seconds:.1f}s)")
    return results
