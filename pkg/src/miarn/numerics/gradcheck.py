"""Finite-difference verification of analytic gradients."""

from __future__ import annotations

import numpy as np

from .tensor import Graph


def grad_check(f, params, eps: float) -> float:
    """Compare analytic gradients of ``f`` against central finite differences.

    ``f`` must be a deterministic function mapping ``params`` (a sequence of
    requires_grad tensors, typically float64) to a scalar Tensor.  For every
    parameter entry the analytic gradient is compared to
    ``(f(p + eps) - f(p - eps)) / (2 eps)`` and the maximum relative error
    ``|ga - gn| / max(|ga|, |gn|, 1e-8)`` is returned.
    """
    if eps <= 0:
        raise ValueError(f"grad_check: eps must be positive, got {eps}")
    params = list(params)

    for p in params:
        p.grad = None
    with Graph() as g:
        loss = f(params)
    g.backward(loss)
    analytic = [
        p.grad.copy() if p.grad is not None else np.zeros_like(p.data) for p in params
    ]

    worst = 0.0
    for p, ga in zip(params, analytic):
        flat = p.data.reshape(-1)
        ga_flat = ga.reshape(-1)
        for k in range(flat.size):
            saved = flat[k]
            flat[k] = saved + eps
            up = float(f(params).data)
            flat[k] = saved - eps
            down = float(f(params).data)
            flat[k] = saved
            gn = (up - down) / (2.0 * eps)
            denom = max(abs(ga_flat[k]), abs(gn), 1e-8)
            worst = max(worst, abs(ga_flat[k] - gn) / denom)
    return worst
