"""Dense tensors with tape-based reverse-mode differentiation.

A Tape records executed ops in order; replaying the record backwards visits
nodes in exact reverse topological order, which also fixes the gradient
accumulation order (determinism). Gradients are only ever allocated for
tensors with requires_grad=True.
"""

import numpy as np


class GradError(Exception):
    pass


class Tensor:
    __slots__ = ("data", "requires_grad", "_grad")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data)
        self.requires_grad = bool(requires_grad)
        self._grad = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def grad(self):
        if not self.requires_grad:
            raise GradError("gradient queried for a non-tracked tensor")
        return self._grad

    def detach(self):
        return Tensor(self.data, requires_grad=False)

    def clear_grad(self):
        self._grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"


_ACTIVE_TAPE = None


class Tape:
    """Single-owner op record for one forward/backward pass."""

    def __init__(self):
        self._nodes = []
        self._outputs = set()

    def __enter__(self):
        global _ACTIVE_TAPE
        if _ACTIVE_TAPE is not None:
            raise GradError("a tape is already active; tapes do not nest")
        _ACTIVE_TAPE = self
        return self

    def __exit__(self, exc_type, exc, tb):
        global _ACTIVE_TAPE
        _ACTIVE_TAPE = None
        return False

    def record(self, out, backward_fn):
        self._nodes.append((out, backward_fn))
        self._outputs.add(id(out))

    def backward(self, loss):
        """Seed d(loss)=1 and run the record in reverse."""
        if loss.data.size != 1:
            raise GradError(f"backward needs a scalar loss, got shape {loss.data.shape}")
        if id(loss) not in self._outputs:
            raise GradError("loss was not produced on this tape")
        loss._grad = np.ones_like(loss.data)
        for out, fn in reversed(self._nodes):
            g = out._grad
            if g is not None:
                fn(g)
                out._grad = None  # free intermediate grads as we go

    def clear(self):
        self._nodes.clear()
        self._outputs.clear()


def active_tape():
    return _ACTIVE_TAPE


def accumulate(t, g):
    """Add a gradient contribution to a tensor (no-op for untracked ones)."""
    if t.requires_grad:
        t._grad = g if t._grad is None else t._grad + g


def backward(tape, loss):
    tape.backward(loss)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def check_finite(x, what="tensor"):
    if not np.all(np.isfinite(x)):
        raise FloatingPointError(f"non-finite values in {what}")
