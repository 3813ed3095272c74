"""Differentiable operations over :class:`~miarn.numerics.tensor.Tensor`.

Every op computes its forward result eagerly, propagates ``requires_grad``
and, when a Graph is active, records one backward closure on it.  Backward
closures read ``out.grad`` (skipping when the output was never reached from
the loss) and accumulate into input gradients.

Masked ops never do arithmetic on invalid cells, so no NaN can enter a
backward pass through masking.
"""

from __future__ import annotations

import numpy as np

from . import kernels
from .tensor import ShapeError, Tensor, current_graph


def _record(out, fn):
    g = current_graph()
    if g is not None and out.requires_grad:
        g.record(fn)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of a (m, k) and b (k, n)."""
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(
            f"matmul: incompatible shapes {tuple(a.shape)} and {tuple(b.shape)}"
        )
    out = Tensor(a.data @ b.data, requires_grad=a.requires_grad or b.requires_grad)

    def bwd():
        g = out.grad
        if g is None:
            return
        if a.requires_grad:
            a.accumulate_grad(g @ b.data.T)
        if b.requires_grad:
            b.accumulate_grad(a.data.T @ g)

    _record(out, bwd)
    return out


def concat(a: Tensor, b: Tensor) -> Tensor:
    """Concatenate along the last axis; all leading dimensions must agree."""
    if a.data.ndim != b.data.ndim or a.shape[:-1] != b.shape[:-1]:
        raise ShapeError(
            f"concat: leading dimensions differ, {tuple(a.shape)} vs {tuple(b.shape)}"
        )
    out = Tensor(
        np.concatenate((a.data, b.data), axis=-1),
        requires_grad=a.requires_grad or b.requires_grad,
    )
    p = a.shape[-1]

    def bwd():
        g = out.grad
        if g is None:
            return
        if a.requires_grad:
            a.accumulate_grad(g[..., :p])
        if b.requires_grad:
            b.accumulate_grad(g[..., p:])

    _record(out, bwd)
    return out


def _check_same_shape(name, a, b):
    if a.shape != b.shape:
        raise ShapeError(
            f"{name}: operand shapes differ, {tuple(a.shape)} vs {tuple(b.shape)}"
        )


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape("add", a, b)
    out = Tensor(a.data + b.data, requires_grad=a.requires_grad or b.requires_grad)

    def bwd():
        g = out.grad
        if g is None:
            return
        if a.requires_grad:
            a.accumulate_grad(g)
        if b.requires_grad:
            b.accumulate_grad(g)

    _record(out, bwd)
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape("sub", a, b)
    out = Tensor(a.data - b.data, requires_grad=a.requires_grad or b.requires_grad)

    def bwd():
        g = out.grad
        if g is None:
            return
        if a.requires_grad:
            a.accumulate_grad(g)
        if b.requires_grad:
            b.accumulate_grad(-g)

    _record(out, bwd)
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape("mul", a, b)
    out = Tensor(a.data * b.data, requires_grad=a.requires_grad or b.requires_grad)

    def bwd():
        g = out.grad
        if g is None:
            return
        if a.requires_grad:
            a.accumulate_grad(g * b.data)
        if b.requires_grad:
            b.accumulate_grad(g * a.data)

    _record(out, bwd)
    return out


def scale(a: Tensor, k: float) -> Tensor:
    k = float(k)
    out = Tensor(a.data * k, requires_grad=a.requires_grad)

    def bwd():
        if out.grad is not None and a.requires_grad:
            a.accumulate_grad(out.grad * k)

    _record(out, bwd)
    return out


def add_scalar(a: Tensor, c: float) -> Tensor:
    out = Tensor(a.data + float(c), requires_grad=a.requires_grad)

    def bwd():
        if out.grad is not None and a.requires_grad:
            a.accumulate_grad(out.grad)

    _record(out, bwd)
    return out


def add_rowvec(m: Tensor, v: Tensor) -> Tensor:
    """Add a (c,) vector to every row of an (r, c) matrix."""
    if m.data.ndim != 2 or v.data.ndim != 1 or m.shape[1] != v.shape[0]:
        raise ShapeError(
            f"add_rowvec: incompatible shapes {tuple(m.shape)} and {tuple(v.shape)}"
        )
    out = Tensor(m.data + v.data, requires_grad=m.requires_grad or v.requires_grad)

    def bwd():
        g = out.grad
        if g is None:
            return
        if m.requires_grad:
            m.accumulate_grad(g)
        if v.requires_grad:
            v.accumulate_grad(g.sum(axis=0))

    _record(out, bwd)
    return out


def relu(a: Tensor) -> Tensor:
    out = Tensor(np.maximum(a.data, 0), requires_grad=a.requires_grad)

    def bwd():
        # subgradient at exactly 0 is 0
        if out.grad is not None and a.requires_grad:
            a.accumulate_grad(out.grad * (a.data > 0))

    _record(out, bwd)
    return out


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    e = np.exp(-np.abs(x))
    out = Tensor(np.where(x >= 0, 1 / (1 + e), e / (1 + e)), requires_grad=a.requires_grad)

    def bwd():
        if out.grad is not None and a.requires_grad:
            s = out.data
            a.accumulate_grad(out.grad * s * (1 - s))

    _record(out, bwd)
    return out


def tanh(a: Tensor) -> Tensor:
    out = Tensor(np.tanh(a.data), requires_grad=a.requires_grad)

    def bwd():
        if out.grad is not None and a.requires_grad:
            t = out.data
            a.accumulate_grad(out.grad * (1 - t * t))

    _record(out, bwd)
    return out


def log(a: Tensor) -> Tensor:
    """Natural log; callers clamp into a positive range first."""
    out = Tensor(np.log(a.data), requires_grad=a.requires_grad)

    def bwd():
        if out.grad is not None and a.requires_grad:
            a.accumulate_grad(out.grad / a.data)

    _record(out, bwd)
    return out


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp values into [lo, hi]; gradient passes only where unclamped."""
    out = Tensor(np.clip(a.data, lo, hi), requires_grad=a.requires_grad)

    def bwd():
        if out.grad is not None and a.requires_grad:
            inside = (a.data >= lo) & (a.data <= hi)
            a.accumulate_grad(out.grad * inside)

    _record(out, bwd)
    return out


def reshape(a: Tensor, shape) -> Tensor:
    out = Tensor(a.data.reshape(shape), requires_grad=a.requires_grad)
    orig = a.shape

    def bwd():
        if out.grad is not None and a.requires_grad:
            a.accumulate_grad(out.grad.reshape(orig))

    _record(out, bwd)
    return out


def sum_all(a: Tensor) -> Tensor:
    out = Tensor(np.asarray(a.data.sum(), dtype=a.dtype), requires_grad=a.requires_grad)

    def bwd():
        if out.grad is not None and a.requires_grad:
            a.accumulate_grad(np.broadcast_to(out.grad, a.shape))

    _record(out, bwd)
    return out


def sq_sum(a: Tensor) -> Tensor:
    """Sum of squared entries (the L2 penalty building block)."""
    out = Tensor(np.asarray((a.data * a.data).sum(), dtype=a.dtype),
                 requires_grad=a.requires_grad)

    def bwd():
        if out.grad is not None and a.requires_grad:
            a.accumulate_grad(2 * a.data * out.grad)

    _record(out, bwd)
    return out


def weighted_sum(a: Tensor, w) -> Tensor:
    """Dot product with a constant weight vector; returns a scalar tensor."""
    w = np.asarray(w, dtype=a.dtype)
    if a.data.ndim != 1 or w.shape != a.shape:
        raise ShapeError(
            f"weighted_sum: incompatible shapes {tuple(a.shape)} and {tuple(w.shape)}"
        )
    out = Tensor(np.asarray(a.data @ w, dtype=a.dtype), requires_grad=a.requires_grad)

    def bwd():
        if out.grad is not None and a.requires_grad:
            a.accumulate_grad(out.grad * w)

    _record(out, bwd)
    return out


def take_rows(a: Tensor, idx) -> Tensor:
    """Gather rows ``a[idx]``; backward scatter-adds into the source rows."""
    idx = np.asarray(idx, dtype=np.int64)
    if idx.ndim != 1:
        raise ShapeError(f"take_rows: index must be 1-d, got shape {tuple(idx.shape)}")
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[0]):
        raise IndexError(
            f"take_rows: id out of range for {a.shape[0]} rows "
            f"(got {int(idx.min())}..{int(idx.max())})"
        )
    out = Tensor(a.data[idx], requires_grad=a.requires_grad)

    def bwd():
        g = out.grad
        if g is None or not a.requires_grad:
            return
        if a.grad is None:
            a.grad = np.zeros_like(a.data)
        np.add.at(a.grad, idx, g)

    _record(out, bwd)
    return out


def take_column(a: Tensor, j: int) -> Tensor:
    if a.data.ndim != 2 or not (0 <= j < a.shape[1]):
        raise ShapeError(f"take_column: column {j} not in shape {tuple(a.shape)}")
    out = Tensor(a.data[:, j].copy(), requires_grad=a.requires_grad)

    def bwd():
        g = out.grad
        if g is None or not a.requires_grad:
            return
        if a.grad is None:
            a.grad = np.zeros_like(a.data)
        a.grad[:, j] += g

    _record(out, bwd)
    return out


def stack_rows(tensors) -> Tensor:
    """Stack 1-d tensors of equal length into a matrix, one per row."""
    tensors = list(tensors)
    if not tensors:
        raise ShapeError("stack_rows: need at least one tensor")
    width = tensors[0].shape
    for t in tensors:
        if t.data.ndim != 1 or t.shape != width:
            raise ShapeError(
                f"stack_rows: row shapes differ, {tuple(width)} vs {tuple(t.shape)}"
            )
    out = Tensor(
        np.stack([t.data for t in tensors]),
        requires_grad=any(t.requires_grad for t in tensors),
    )

    def bwd():
        g = out.grad
        if g is None:
            return
        for i, t in enumerate(tensors):
            if t.requires_grad:
                t.accumulate_grad(g[i])

    _record(out, bwd)
    return out


def mirror_pairs(scores: Tensor, idx_i, idx_j, ell: int):
    """Scatter per-pair scores into a symmetric (ell, ell) matrix.

    Cell (i, j) and its mirror (j, i) both receive scores[p] for pair p; all
    other cells stay 0 and are flagged invalid in the returned boolean mask.
    Backward sums the gradient from both mirrored cells into each score.
    """
    idx_i = np.asarray(idx_i, dtype=np.int64)
    idx_j = np.asarray(idx_j, dtype=np.int64)
    if scores.data.ndim != 1 or scores.shape[0] != idx_i.shape[0] != idx_j.shape[0]:
        raise ShapeError(
            f"mirror_pairs: {tuple(scores.shape)} scores vs "
            f"{idx_i.shape[0]}/{idx_j.shape[0]} index pairs"
        )
    s = np.zeros((ell, ell), dtype=scores.dtype)
    mask = np.zeros((ell, ell), dtype=bool)
    s[idx_i, idx_j] = scores.data
    s[idx_j, idx_i] = scores.data
    mask[idx_i, idx_j] = True
    mask[idx_j, idx_i] = True
    out = Tensor(s, requires_grad=scores.requires_grad)

    def bwd():
        g = out.grad
        if g is None or not scores.requires_grad:
            return
        scores.accumulate_grad(g[idx_i, idx_j] + g[idx_j, idx_i])

    _record(out, bwd)
    return out, mask


def masked_row_max(s: Tensor, mask):
    """Row-wise max over mask-valid cells of a square matrix.

    Returns (values, row_ok) where row_ok flags rows that had at least one
    valid cell; fully-masked rows get value 0 and row_ok False.  The backward
    pass routes each row's gradient to that row's (first) argmax cell only.
    """
    mask = np.asarray(mask, dtype=bool)
    if s.data.ndim != 2 or s.shape[0] != s.shape[1] or mask.shape != s.shape:
        raise ShapeError(
            f"masked_row_max: matrix {tuple(s.shape)} vs mask {tuple(mask.shape)}"
        )
    vals, arg, ok = kernels.row_max_masked(s.data, mask)
    out = Tensor(vals, requires_grad=s.requires_grad)

    def bwd():
        g = out.grad
        if g is None or not s.requires_grad:
            return
        if s.grad is None:
            s.grad = np.zeros_like(s.data)
        rows = np.nonzero(ok)[0]
        s.grad[rows, arg[rows]] += g[rows]

    _record(out, bwd)
    return out, ok


def masked_softmax(v: Tensor, valid, fallback_valid=None) -> Tensor:
    """Softmax over valid entries; invalid entries get exactly 0.

    When every entry is invalid the result carries no gradient and is uniform
    over the positions flagged in ``fallback_valid`` (the caller decides what
    the degenerate support is).
    """
    valid = np.asarray(valid, dtype=bool)
    if v.data.ndim != 1 or valid.shape != v.shape:
        raise ShapeError(
            f"masked_softmax: vector {tuple(v.shape)} vs mask {tuple(valid.shape)}"
        )
    if not valid.any():
        if fallback_valid is None:
            raise ValueError("masked_softmax: all entries invalid and no fallback given")
        fallback_valid = np.asarray(fallback_valid, dtype=bool)
        n = int(fallback_valid.sum())
        if n == 0:
            raise ValueError("masked_softmax: degenerate fallback has no positions")
        a = np.zeros_like(v.data)
        a[fallback_valid] = 1.0 / n
        return Tensor(a, requires_grad=False)

    a = kernels.softmax_masked(v.data, valid)
    out = Tensor(a, requires_grad=v.requires_grad)

    def bwd():
        g = out.grad
        if g is None or not v.requires_grad:
            return
        # a is 0 on invalid positions, so their contribution vanishes
        v.accumulate_grad(a * (g - (g * a).sum()))

    _record(out, bwd)
    return out


def softmax_rows(t: Tensor) -> Tensor:
    """Row-wise softmax of a 2-d tensor, max-subtracted for stability."""
    if t.data.ndim != 2:
        raise ShapeError(f"softmax_rows: expected 2-d, got {tuple(t.shape)}")
    x = t.data
    e = np.exp(x - x.max(axis=1, keepdims=True))
    a = e / e.sum(axis=1, keepdims=True)
    out = Tensor(a, requires_grad=t.requires_grad)

    def bwd():
        g = out.grad
        if g is None or not t.requires_grad:
            return
        t.accumulate_grad(a * (g - (g * a).sum(axis=1, keepdims=True)))

    _record(out, bwd)
    return out


_ELEMENTWISE = {
    "relu": relu,
    "sigmoid": sigmoid,
    "tanh": tanh,
    "add": add,
    "mul": mul,
    "scale": scale,
}


def elementwise(op: str, *args):
    """Dispatch by name into the pointwise op family."""
    try:
        fn = _ELEMENTWISE[op]
    except KeyError:
        raise ValueError(f"unknown elementwise op {op!r}") from None
    return fn(*args)
