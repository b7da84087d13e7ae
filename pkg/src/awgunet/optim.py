"""Learnable-parameter registry and the Adam update rule.

A :class:`ParameterStore` owns every trainable tensor of a model under a
unique dotted path, in deterministic registration order, together with its
Adam moment buffers.  Layers hold parameter *names* and look tensors up at
call time, which keeps checkpoint loading a pure data swap.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import DEFAULT_DTYPE, Tensor


@dataclass
class Parameter:
    tensor: Tensor
    m: np.ndarray  # first-moment estimate
    v: np.ndarray  # second-moment estimate


class ParameterStore:
    """Ordered mapping of dotted names to parameters."""

    def __init__(self):
        self._entries: dict[str, Parameter] = {}

    def register(self, name: str, tensor: Tensor) -> Tensor:
        if name in self._entries:
            raise ValueError(f"parameter {name!r} registered twice")
        tensor.requires_grad = True
        self._entries[name] = Parameter(
            tensor=tensor,
            m=np.zeros_like(tensor.data),
            v=np.zeros_like(tensor.data),
        )
        return tensor

    def __getitem__(self, name: str) -> Tensor:
        return self._entries[name].tensor

    def __contains__(self, name: str) -> bool:
        return name in self._entries

    def __len__(self) -> int:
        return len(self._entries)

    def names(self) -> list[str]:
        return list(self._entries)

    def items(self):
        return self._entries.items()

    def entry(self, name: str) -> Parameter:
        return self._entries[name]

    def zero_grads(self) -> None:
        for p in self._entries.values():
            p.tensor.zero_grad()

    def parameter_count(self) -> int:
        return sum(p.tensor.size for p in self._entries.values())

    def clone(self) -> "ParameterStore":
        """Deep copy of tensors and moment buffers (gradients excluded)."""
        out = ParameterStore()
        for name, p in self._entries.items():
            out._entries[name] = Parameter(
                tensor=Tensor(p.tensor.data.copy(), requires_grad=True),
                m=p.m.copy(),
                v=p.v.copy(),
            )
        return out


def adam_step(store: ParameterStore, lr: float, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8, t: int = 1) -> ParameterStore:
    """One bias-corrected Adam update; gradients are zeroed afterwards.

    ``t`` is the 1-based global step index used for bias correction.
    Every registered parameter must carry a gradient.
    """
    if t < 1:
        raise ValueError(f"adam_step: step index must be >= 1, got {t}")
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    for name, p in store.items():
        g = p.tensor.grad
        if g is None:
            raise ValueError(f"adam_step: parameter {name!r} has no gradient")
        p.m *= beta1
        p.m += (1.0 - beta1) * g
        p.v *= beta2
        p.v += (1.0 - beta2) * (g * g)
        m_hat = p.m / bc1
        v_hat = p.v / bc2
        p.tensor.data -= (lr * m_hat / (np.sqrt(v_hat) + eps)).astype(
            p.tensor.dtype, copy=False)
        p.tensor.zero_grad()
    return store


def he_normal(rng: np.random.Generator, shape: tuple, fan_in: int,
              dtype=DEFAULT_DTYPE) -> np.ndarray:
    """He-normal draw: N(0, sqrt(2/fan_in)), suited to ReLU stacks."""
    std = np.sqrt(2.0 / fan_in)
    return (rng.standard_normal(shape) * std).astype(dtype)
