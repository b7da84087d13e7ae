"""Central finite-difference verification of backward passes.

The checker perturbs every element of the watched tensors in place, so
the function under test must rebuild its graph from those tensors on each
call.  Tensors should be float64: the default step of 1e-5 sits near the
optimum for 64-bit central differences, while float32 would drown real
defects in rounding noise.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .autodiff import GradientTape, Tensor


def max_relative_error(fn: Callable[[], Tensor], wrt: Sequence[Tensor],
                       delta: float = 1e-5) -> float:
    """Worst relative disagreement between analytic and numeric gradients.

    ``fn`` takes no arguments, reads the tensors in ``wrt`` (plus any
    constants it closes over) and returns a scalar Tensor.  Elements where
    both gradients are essentially zero are skipped.
    """
    for t in wrt:
        if t.dtype != np.float64:
            raise ValueError(
                f"gradient checks need float64 tensors, got {t.dtype}")
        t.zero_grad()
        t.requires_grad = True

    with GradientTape() as tape:
        out = fn()
    tape.backward(out)
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy()
                for t in wrt]

    worst = 0.0
    for t, ana in zip(wrt, analytic):
        flat = t.data.reshape(-1)
        ana_flat = ana.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            step = delta * max(1.0, abs(orig))
            flat[i] = orig + step
            f_plus = fn().item()
            flat[i] = orig - step
            f_minus = fn().item()
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * step)
            denom = max(abs(ana_flat[i]), abs(numeric))
            if denom < 1e-10:
                continue
            worst = max(worst, abs(ana_flat[i] - numeric) / denom)
    return worst


def assert_gradients_close(fn: Callable[[], Tensor], wrt: Sequence[Tensor],
                           rel_tol: float = 1e-3, delta: float = 1e-5) -> float:
    """Raise AssertionError when any gradient misses ``rel_tol``."""
    err = max_relative_error(fn, wrt, delta=delta)
    if err >= rel_tol:
        raise AssertionError(
            f"analytic gradient disagrees with finite differences: "
            f"max relative error {err:.3e} >= {rel_tol:g}")
    return err
