"""Dense tensors on numpy storage plus a reverse-mode differentiation tape.

A :class:`Graph` is an ordered record of executed operations.  Ops (see
``ops.py``) append one backward closure per executed operation while a graph
is active; ``backward`` replays those closures in exact reverse execution
order, accumulating into ``Tensor.grad`` buffers.

Training runs in single precision; gradient checking builds float64 tensors
and every operation preserves the dtype of its operands.
"""

from __future__ import annotations

import numpy as np

DEFAULT_DTYPE = np.float32


class ShapeError(ValueError):
    """Operand shapes do not satisfy an operation's contract."""


class Tensor:
    """A dense n-dimensional array that can participate in differentiation.

    ``grad`` is lazily allocated (same shape and dtype as ``data``) the first
    time a backward closure accumulates into this tensor.
    """

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad=False, dtype=None):
        if isinstance(data, Tensor):
            raise TypeError("wrap raw arrays, not Tensors")
        if dtype is not None:
            arr = np.asarray(data, dtype=dtype)
        else:
            arr = np.asarray(data)
            if not np.issubdtype(arr.dtype, np.floating):
                arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return float(self.data.reshape(-1)[0])

    def zero_grad(self):
        """Reset the gradient accumulator in place (keeps the buffer)."""
        if self.grad is not None:
            self.grad.fill(0)

    def detach(self):
        return Tensor(self.data.copy(), requires_grad=False)

    def accumulate_grad(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={tuple(self.shape)}, dtype={self.data.dtype}{flag})"


_GRAPH_STACK: list["Graph"] = []


def current_graph():
    """The innermost active Graph, or None when recording is off."""
    return _GRAPH_STACK[-1] if _GRAPH_STACK else None


class Graph:
    """Ordered tape of executed operations for one forward/backward pass."""

    __slots__ = ("_steps",)

    def __init__(self):
        self._steps = []

    def record(self, backward_fn):
        self._steps.append(backward_fn)

    def __len__(self):
        return len(self._steps)

    def __enter__(self):
        _GRAPH_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _GRAPH_STACK.pop()
        assert popped is self
        return False

    def backward(self, loss):
        """Accumulate d(loss)/d(t) into every reachable tensor's ``grad``."""
        if not isinstance(loss, Tensor):
            raise TypeError("loss must be a Tensor")
        if loss.data.size != 1:
            raise ValueError(
                f"backward needs a scalar loss, got shape {tuple(loss.shape)}"
            )
        loss.accumulate_grad(np.ones_like(loss.data))
        for fn in reversed(self._steps):
            fn()


def backward(graph, loss):
    """Run the reverse pass of ``graph`` from the scalar ``loss``."""
    graph.backward(loss)
