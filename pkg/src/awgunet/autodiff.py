"""Reverse-mode automatic differentiation over numpy arrays.

A forward pass executed inside an active :class:`GradientTape` records one
node per operation.  ``GradientTape.backward`` walks the recorded nodes in
reverse; because every op only consumes tensors that already exist, the
recording order is a valid topological order of the compute graph.

Training runs in float32.  Gradient checking builds float64 tensors
instead: central finite differences at float32 are too noisy to separate
real backward-pass bugs from rounding error.  Every op preserves the dtype
of its inputs, so the same code path serves both modes.
"""

from __future__ import annotations

import threading

import numpy as np

from .exceptions import ShapeError

DEFAULT_DTYPE = np.float32

_FLOAT_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))


class Tensor:
    """A numpy array with an optional gradient buffer.

    Feature maps are rank-4 ``(batch, channels, rows, cols)``; weights and
    biases use whatever rank suits them (convolution kernels rank 4, dense
    weights rank 2, biases and per-channel gains rank 1, reduced losses
    rank 0).  ``grad``, when populated, always matches ``data``'s shape.
    """

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if dtype is not None:
            arr = np.asarray(data, dtype=dtype)
        else:
            arr = np.asarray(data)
            if arr.dtype not in _FLOAT_DTYPES:
                arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def accumulate_grad(self, g: np.ndarray) -> None:
        # Copy on first accumulation: backward functions may hand back the
        # incoming gradient itself (e.g. `add`), which must not be aliased.
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{flag})"


class _Node:
    __slots__ = ("out", "parents", "backward")

    def __init__(self, out, parents, backward):
        self.out = out
        self.parents = parents
        self.backward = backward


_LOCAL = threading.local()


def _stack() -> list:
    stack = getattr(_LOCAL, "tapes", None)
    if stack is None:
        stack = []
        _LOCAL.tapes = stack
    return stack


def active_tape():
    """The innermost open tape on this thread, or None."""
    stack = _stack()
    return stack[-1] if stack else None


def recording(*parents) -> bool:
    """True when a tape is open and some parent wants gradients.

    Ops call this before building their backward closure so that pure
    inference pays no autodiff overhead.
    """
    if not _stack():
        return False
    return any(p is not None and p.requires_grad for p in parents)


def record_op(out: Tensor, parents, backward) -> Tensor:
    """Mark ``out`` differentiable and register its backward function.

    ``backward(gout)`` must return one gradient array (or None) per entry
    of ``parents``, in order.
    """
    out.requires_grad = True
    active_tape().record(out, tuple(parents), backward)
    return out


class GradientTape:
    """Records ops executed in its ``with`` block for later backprop.

    Usage::

        with GradientTape() as tape:
            loss = combined_loss(model_forward(x), target)
        tape.backward(loss)

    After ``backward`` every tensor that required gradients and sits on a
    path to the loss holds its accumulated gradient in ``.grad``.
    """

    def __init__(self):
        self._nodes: list[_Node] = []

    def __enter__(self) -> "GradientTape":
        _stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        popped = _stack().pop()
        assert popped is self, "GradientTape stack corrupted"

    def record(self, out: Tensor, parents, backward) -> None:
        self._nodes.append(_Node(out, parents, backward))

    def backward(self, output: Tensor) -> None:
        """Seed ``output`` with gradient one and propagate to all leaves."""
        if output.size != 1:
            raise ShapeError(
                f"backward() needs a scalar output, got shape {output.shape}; "
                "reduce with sum_all() or a loss first"
            )
        output.accumulate_grad(np.ones_like(output.data))
        for node in reversed(self._nodes):
            gout = node.out.grad
            if gout is None:
                continue  # not on a path to the seeded output
            grads = node.backward(gout)
            for parent, g in zip(node.parents, grads):
                if g is None or not parent.requires_grad:
                    continue
                parent.accumulate_grad(g)
