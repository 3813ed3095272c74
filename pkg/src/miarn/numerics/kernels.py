"""Hot numeric kernels: LSTM recurrence (forward + BPTT) and masked attention reductions.

Every kernel exists in two flavors:

* ``*_nb`` -- compiled with numba's ``@njit`` (the default when numba imports),
* ``*_np`` -- a pure-numpy twin used as fallback.

Set ``MIARN_NUMBA=0`` in the environment to force the numpy path; any other
value (or leaving it unset) uses numba when available.  The exported names
(``lstm_forward``, ``lstm_backward``, ``row_max_masked``, ``softmax_masked``)
point at whichever flavor is active.  ``benchmarks/bench_kernels.py`` times
the two side by side.
"""

import os

import numpy as np

_flag = os.environ.get("MIARN_NUMBA", "1").strip().lower()
_WANT_NUMBA = _flag not in ("0", "false", "off", "no")

try:
    from numba import njit

    NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover - exercised only without numba installed
    njit = None
    NUMBA_AVAILABLE = False

USING_NUMBA = _WANT_NUMBA and NUMBA_AVAILABLE


# ----------------------------------------------------------------------
# LSTM kernels.
#
# Single-source: the bodies below are plain loop-over-timesteps numpy code
# that numba can compile as-is, so both flavors share one implementation.
# Weights arrive packed as a (4d, n+d) matrix with gate row blocks in the
# order [input, forget, output, candidate]; biases as (4d,).
# ----------------------------------------------------------------------

def _lstm_forward_impl(x, w, b, n_steps):
    """Run the recurrence over the first ``n_steps`` rows of ``x``.

    x: (L, n) inputs, w: (4d, n+d) packed gate weights, b: (4d,).
    Returns per-step activations needed by the backward pass:
    (H, C, TC, I, F, O, G), each (n_steps, d).
    """
    n = x.shape[1]
    d = w.shape[0] // 4
    one = np.ones(1, x.dtype)[0]

    H = np.zeros((n_steps, d), x.dtype)
    C = np.zeros((n_steps, d), x.dtype)
    TC = np.zeros((n_steps, d), x.dtype)
    I = np.zeros((n_steps, d), x.dtype)
    F = np.zeros((n_steps, d), x.dtype)
    O = np.zeros((n_steps, d), x.dtype)
    G = np.zeros((n_steps, d), x.dtype)

    h = np.zeros(d, x.dtype)
    c = np.zeros(d, x.dtype)
    z = np.empty(n + d, x.dtype)
    for t in range(n_steps):
        z[:n] = x[t]
        z[n:] = h
        pre = np.dot(w, z) + b
        # numerically safe sigmoid: exp of a non-positive argument only
        e = np.exp(-np.abs(pre[: 3 * d]))
        sig = np.where(pre[: 3 * d] >= 0, one / (one + e), e / (one + e))
        i = sig[:d]
        f = sig[d : 2 * d]
        o = sig[2 * d :]
        g = np.tanh(pre[3 * d :])
        c = f * c + i * g
        tc = np.tanh(c)
        h = o * tc
        I[t] = i
        F[t] = f
        O[t] = o
        G[t] = g
        C[t] = c
        TC[t] = tc
        H[t] = h
    return H, C, TC, I, F, O, G


def _lstm_backward_impl(x, w, H, C, TC, I, F, O, G, d_h, n_steps):
    """Backprop through time given per-step hidden gradients ``d_h`` (n_steps, d).

    Returns (dx, dw, db): dx is (L, n) with zero rows past n_steps.  The
    weight gradient is accumulated as one matrix product over the stacked
    per-step pre-activation gradients, not per-step outer products.
    """
    n = x.shape[1]
    d = w.shape[0] // 4
    one = np.ones(1, x.dtype)[0]
    wT = w.T.copy()

    dx = np.zeros_like(x)
    DPRE = np.zeros((n_steps, 4 * d), x.dtype)
    Z = np.zeros((n_steps, n + d), x.dtype)

    dh_rec = np.zeros(d, x.dtype)
    dc_rec = np.zeros(d, x.dtype)
    for t in range(n_steps - 1, -1, -1):
        dh = d_h[t] + dh_rec
        dc = dc_rec + dh * O[t] * (one - TC[t] * TC[t])
        if t > 0:
            c_prev = C[t - 1]
            h_prev = H[t - 1]
        else:
            c_prev = np.zeros(d, x.dtype)
            h_prev = np.zeros(d, x.dtype)
        DPRE[t, :d] = dc * G[t] * I[t] * (one - I[t])
        DPRE[t, d : 2 * d] = dc * c_prev * F[t] * (one - F[t])
        DPRE[t, 2 * d : 3 * d] = dh * TC[t] * O[t] * (one - O[t])
        DPRE[t, 3 * d :] = dc * I[t] * (one - G[t] * G[t])

        Z[t, :n] = x[t]
        Z[t, n:] = h_prev
        dz = np.dot(wT, DPRE[t])
        dx[t] = dz[:n]
        dh_rec = dz[n:]
        dc_rec = dc * F[t]
    dw = np.dot(np.ascontiguousarray(DPRE.T), Z)
    db = np.dot(np.ones(n_steps, x.dtype), DPRE)
    return dx, dw, db


# ----------------------------------------------------------------------
# Masked reductions for the intra-attention path.  These are dual-source:
# the numba flavor skips invalid cells with explicit loops, the numpy
# flavor uses -inf / zero identities (never arithmetic on masked cells,
# so no NaN can propagate into any backward computation).
# ----------------------------------------------------------------------

def _row_max_masked_loop(s, mask):
    """Per-row max over mask-valid cells of a square matrix.

    Returns (values, argmax, row_ok).  Rows without a single valid cell get
    value 0, argmax -1 and row_ok False; ties resolve to the lowest column.
    """
    ell = s.shape[0]
    vals = np.zeros(ell, s.dtype)
    arg = np.full(ell, -1, np.int64)
    ok = np.zeros(ell, np.bool_)
    for i in range(ell):
        best = vals[0]
        found = False
        for j in range(ell):
            if mask[i, j] and (not found or s[i, j] > best):
                best = s[i, j]
                arg[i] = j
                found = True
        if found:
            vals[i] = best
            ok[i] = True
    return vals, arg, ok


def row_max_masked_np(s, mask):
    neg_inf = s.dtype.type(-np.inf)
    zero = s.dtype.type(0)
    guarded = np.where(mask, s, neg_inf)
    ok = mask.any(axis=1)
    vals = np.where(ok, guarded.max(axis=1), zero)
    arg = np.where(ok, guarded.argmax(axis=1), -1).astype(np.int64)
    return vals, arg, ok


def _softmax_masked_loop(v, valid):
    """Softmax over the valid entries of ``v``; invalid entries get exactly 0.

    Caller guarantees at least one valid entry.  Max-subtracted for stability.
    """
    ell = v.shape[0]
    a = np.zeros(ell, v.dtype)
    m = v[0]
    found = False
    for i in range(ell):
        if valid[i] and (not found or v[i] > m):
            m = v[i]
            found = True
    total = a[0]
    for i in range(ell):
        if valid[i]:
            a[i] = np.exp(v[i] - m)
            total += a[i]
    for i in range(ell):
        if valid[i]:
            a[i] = a[i] / total
    return a


def softmax_masked_np(v, valid):
    zero = v.dtype.type(0)
    m = v[valid].max()
    e = np.where(valid, np.exp(np.where(valid, v, m) - m), zero)
    return e / e.sum()


if NUMBA_AVAILABLE:
    lstm_forward_nb = njit(cache=True)(_lstm_forward_impl)
    lstm_backward_nb = njit(cache=True)(_lstm_backward_impl)
    row_max_masked_nb = njit(cache=True)(_row_max_masked_loop)
    softmax_masked_nb = njit(cache=True)(_softmax_masked_loop)
else:  # pragma: no cover
    lstm_forward_nb = None
    lstm_backward_nb = None
    row_max_masked_nb = None
    softmax_masked_nb = None

lstm_forward_np = _lstm_forward_impl
lstm_backward_np = _lstm_backward_impl

if USING_NUMBA:
    lstm_forward = lstm_forward_nb
    lstm_backward = lstm_backward_nb
    row_max_masked = row_max_masked_nb
    softmax_masked = softmax_masked_nb
else:
    lstm_forward = lstm_forward_np
    lstm_backward = lstm_backward_np
    row_max_masked = row_max_masked_np
    softmax_masked = softmax_masked_np
