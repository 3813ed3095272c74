"""Intra-attention recurrent classifiers and baselines.

The two attention models share one skeleton: score every pair of word
embeddings, mirror the scores into a symmetric affinity matrix (diagonal and
PAD-touching cells masked), reduce rows by max, softmax into attention
weights, and combine the attention-weighted embedding sum with the final
hidden state of an LSTM read over the same embeddings.  The "single" variant
scores a pair with one affine map; the "multi" variant projects the pair
through a k-dimensional ReLU layer first.

Baselines: bag-of-embeddings + logistic layer (nbow), vanilla LSTM, and an
attention-over-hidden-states LSTM.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import corpus
from .numerics import Tensor, current_graph
from .numerics import kernels
from .numerics.ops import (
    add,
    add_rowvec,
    add_scalar,
    clip,
    concat,
    log,
    masked_row_max,
    masked_softmax,
    matmul,
    mirror_pairs,
    relu,
    reshape,
    scale,
    softmax_rows,
    sq_sum,
    stack_rows,
    take_column,
    take_rows,
    tanh,
    weighted_sum,
)

PROB_FLOOR = 1e-7  # probabilities are clamped into [PROB_FLOOR, 1 - PROB_FLOOR]

MODEL_KINDS = ("siarn", "miarn", "nbow", "lstm", "attlstm")
ATTENTION_KINDS = ("siarn", "miarn", "attlstm")


# ----------------------------------------------------------------------
# Parameter containers
# ----------------------------------------------------------------------

@dataclass
class SingleAffinityParams:
    w: Tensor  # (2n, 1)
    b: Tensor  # (1,)


@dataclass
class MultiAffinityParams:
    wq: Tensor  # (2n, k)
    bq: Tensor  # (k,)
    wp: Tensor  # (k, 1)
    bp: Tensor  # (1,)


@dataclass
class LstmParams:
    wi: Tensor  # each (d, n+d)
    wf: Tensor
    wo: Tensor
    wg: Tensor
    bi: Tensor  # each (d,); forget bias starts at 1
    bf: Tensor
    bo: Tensor
    bg: Tensor

    @property
    def hidden(self):
        return self.wi.shape[0]

    def packed(self):
        w = np.concatenate(
            [self.wi.data, self.wf.data, self.wo.data, self.wg.data], axis=0
        )
        b = np.concatenate([self.bi.data, self.bf.data, self.bo.data, self.bg.data])
        return w, b

    def requires_grad(self):
        return any(
            t.requires_grad
            for t in (self.wi, self.wf, self.wo, self.wg, self.bi, self.bf, self.bo, self.bg)
        )


@dataclass
class FusionParams:
    wz: Tensor  # (n+d, d)
    bz: Tensor  # (d,)
    wf: Tensor  # (d, 2)
    bf: Tensor  # (2,)


@dataclass
class OutputParams:
    w: Tensor  # (in, 2)
    b: Tensor  # (2,)


@dataclass
class AttnParams:
    w: Tensor  # (d, d)
    b: Tensor  # (d,)
    u: Tensor  # (d, 1)


@dataclass
class AttentionRecord:
    """Affinity matrix and attention weights captured for one document."""

    ids: np.ndarray
    valid_len: int
    a: np.ndarray  # (L,), zero on PAD positions, sums to 1 over valid ones
    s: np.ndarray | None = None  # (L, L) with masked cells holding 0
    mask: np.ndarray | None = None  # True where s holds a real pair score
    tokens: tuple | None = None


# ----------------------------------------------------------------------
# Layer operations
# ----------------------------------------------------------------------

def embed(ids, emb: Tensor) -> Tensor:
    """Look up embedding rows for an id sequence; PAD rows come out zero
    because the PAD embedding row is pinned to zero."""
    return take_rows(emb, np.asarray(ids, dtype=np.int64))


def _pair_features(W: Tensor, valid_len: int):
    iu, ju = np.triu_indices(int(valid_len), k=1)
    return concat(take_rows(W, iu), take_rows(W, ju)), iu, ju


def _empty_affinity(W: Tensor):
    ell = W.shape[0]
    return Tensor(np.zeros((ell, ell), dtype=W.dtype)), np.zeros((ell, ell), dtype=bool)


def affinity_single(W: Tensor, p: SingleAffinityParams, valid_len: int):
    """Affine pair scores, computed once per unordered pair and mirrored.

    Returns (s, mask): s is (L, L) with s[i, j] == s[j, i]; the diagonal and
    every cell touching a PAD position are left masked (mask False, value 0).
    """
    if valid_len < 2:
        return _empty_affinity(W)
    feats, iu, ju = _pair_features(W, valid_len)
    scores = reshape(add_rowvec(matmul(feats, p.w), p.b), (len(iu),))
    return mirror_pairs(scores, iu, ju, W.shape[0])


def affinity_multi(W: Tensor, p: MultiAffinityParams, valid_len: int):
    """Pair scores through a k-wide ReLU projection, mirrored like affinity_single."""
    if valid_len < 2:
        return _empty_affinity(W)
    feats, iu, ju = _pair_features(W, valid_len)
    hidden = relu(add_rowvec(matmul(feats, p.wq), p.bq))
    scores = reshape(add_rowvec(matmul(hidden, p.wp), p.bp), (len(iu),))
    return mirror_pairs(scores, iu, ju, W.shape[0])


def intra_attention(s: Tensor, mask, valid_len: int) -> Tensor:
    """Attention weights: softmax over per-row maxima of the affinity matrix.

    PAD positions get exactly 0.  With a single valid token every cell is
    masked and the lone token receives weight 1.
    """
    rowmax, row_ok = masked_row_max(s, mask)
    token_valid = np.arange(s.shape[0]) < int(valid_len)
    return masked_softmax(rowmax, row_ok, fallback_valid=token_valid)


def attentive_rep(W: Tensor, a: Tensor) -> Tensor:
    """Attention-weighted sum of embedding rows, an (n,) vector."""
    return reshape(matmul(reshape(a, (1, a.shape[0])), W), (W.shape[1],))


def _lstm_apply(W: Tensor, p: LstmParams, valid_len: int, want_states: bool):
    """Shared fused forward + recorded BPTT backward for both LSTM ops."""
    if valid_len < 1:
        raise ValueError("lstm: need at least one valid step")
    x = W.data
    ell, n = x.shape
    d = p.hidden
    t_valid = int(valid_len)
    w, b = p.packed()
    H, C, TC, I, F, O, G = kernels.lstm_forward(x, w, b, t_valid)

    needs_grad = W.requires_grad or p.requires_grad()
    if want_states:
        out_data = np.zeros((ell, d), dtype=x.dtype)
        out_data[:t_valid] = H
    else:
        out_data = H[t_valid - 1].copy()
    out = Tensor(out_data, requires_grad=needs_grad)

    graph = current_graph()
    if graph is not None and needs_grad:

        def bwd():
            g = out.grad
            if g is None:
                return
            if want_states:
                d_h = np.ascontiguousarray(g[:t_valid])
            else:
                d_h = np.zeros((t_valid, d), dtype=x.dtype)
                d_h[t_valid - 1] = g
            dx, dw, db = kernels.lstm_backward(
                x, w, H, C, TC, I, F, O, G, d_h, t_valid
            )
            if W.requires_grad:
                W.accumulate_grad(dx)
            for k, (wt, bt) in enumerate(
                ((p.wi, p.bi), (p.wf, p.bf), (p.wo, p.bo), (p.wg, p.bg))
            ):
                if wt.requires_grad:
                    wt.accumulate_grad(dw[k * d : (k + 1) * d])
                if bt.requires_grad:
                    bt.accumulate_grad(db[k * d : (k + 1) * d])

        graph.record(bwd)
    return out


def lstm_encode(W: Tensor, p: LstmParams, valid_len: int) -> Tensor:
    """Hidden state after reading the valid prefix of W; PAD steps never run."""
    return _lstm_apply(W, p, valid_len, want_states=False)


def lstm_states(W: Tensor, p: LstmParams, valid_len: int) -> Tensor:
    """All per-step hidden states as an (L, d) tensor, zero past valid_len."""
    return _lstm_apply(W, p, valid_len, want_states=True)


def attend_states(H_valid: Tensor, p: AttnParams):
    """Score hidden states with u . tanh(W h + b), softmax, and pool.

    Returns (context (1, d), attention (m,)).
    """
    m = H_valid.shape[0]
    proj = tanh(add_rowvec(matmul(H_valid, p.w), p.b))
    scores = reshape(matmul(proj, p.u), (m,))
    a = masked_softmax(scores, np.ones(m, dtype=bool))
    context = matmul(reshape(a, (1, m)), H_valid)
    return context, a


def fuse_predict(va: Tensor, vc: Tensor, p: FusionParams) -> Tensor:
    """ReLU-join the two views and produce class probabilities.

    Accepts single vectors ((n,), (d,)) or row-stacked matrices; returns (2,)
    or (B, 2) accordingly.  Rows are valid distributions (non-negative, sum 1).
    """
    single = va.data.ndim == 1
    if single:
        va = reshape(va, (1, va.shape[0]))
        vc = reshape(vc, (1, vc.shape[0]))
    joint = relu(add_rowvec(matmul(concat(va, vc), p.wz), p.bz))
    yhat = softmax_rows(add_rowvec(matmul(joint, p.wf), p.bf))
    return reshape(yhat, (2,)) if single else yhat


def loss(yhat: Tensor, labels, lam: float, weights) -> Tensor:
    """Binary cross-entropy over positive-class probabilities plus L2.

    J = -sum_i [y_i log p_i + (1 - y_i) log(1 - p_i)] + lam * sum w^2, where
    p_i = yhat[i, 1] clamped into [1e-7, 1 - 1e-7] and the penalty runs over
    the given weight tensors (biases and the PAD embedding row contribute
    nothing; the PAD row is identically zero).
    """
    y = np.asarray(labels).astype(yhat.dtype)
    p = clip(take_column(yhat, 1), PROB_FLOOR, 1.0 - PROB_FLOOR)
    log_p = log(p)
    log_q = log(add_scalar(scale(p, -1.0), 1.0))
    ce = scale(add(weighted_sum(log_p, y), weighted_sum(log_q, 1.0 - y)), -1.0)
    lam = float(lam)
    if lam == 0.0 or not weights:
        return ce
    reg = None
    for w in weights:
        term = sq_sum(w)
        reg = term if reg is None else add(reg, term)
    return add(ce, scale(reg, lam))


# ----------------------------------------------------------------------
# Models
# ----------------------------------------------------------------------

class _ModelBase:
    kind = None

    @property
    def emb_dim(self):
        return self.emb.shape[1]

    @property
    def vocab_size(self):
        return self.emb.shape[0]

    def parameters(self):
        raise NotImplementedError

    def l2_weights(self):
        raise NotImplementedError

    def tensors(self):
        return dict(self.parameters())

    def pinned_rows(self):
        """(tensor, row) pairs the optimizer must hold at zero (the PAD row)."""
        return [(self.emb, corpus.PAD_ID)]

    def zero_grads(self):
        for _, t in self.parameters():
            t.zero_grad()

    def forward(self, batch, with_records=False):
        raise NotImplementedError

    def state_arrays(self):
        return [(name, t.data) for name, t in self.parameters()]

    def load_state(self, arrays):
        params = dict(self.parameters())
        missing = set(params) - set(arrays)
        extra = set(arrays) - set(params)
        if missing or extra:
            raise ValueError(
                f"checkpoint tensors do not match model: missing={sorted(missing)}, "
                f"unexpected={sorted(extra)}"
            )
        for name, arr in arrays.items():
            t = params[name]
            if tuple(arr.shape) != tuple(t.shape):
                raise ValueError(
                    f"tensor {name}: shape {tuple(arr.shape)} does not match "
                    f"model shape {tuple(t.shape)}"
                )
            t.data = arr.astype(t.dtype, copy=True)
            t.grad = None


def _lstm_param_list(p: LstmParams):
    return [
        ("lstm.wi", p.wi),
        ("lstm.wf", p.wf),
        ("lstm.wo", p.wo),
        ("lstm.wg", p.wg),
        ("lstm.bi", p.bi),
        ("lstm.bf", p.bf),
        ("lstm.bo", p.bo),
        ("lstm.bg", p.bg),
    ]


class SiarnModel(_ModelBase):
    kind = "siarn"

    def __init__(self, emb, aff: SingleAffinityParams, lstm: LstmParams, fuse: FusionParams):
        self.emb = emb
        self.aff = aff
        self.lstm = lstm
        self.fuse = fuse

    @property
    def hidden_dim(self):
        return self.lstm.hidden

    def parameters(self):
        return [
            ("embedding", self.emb),
            ("affinity.w", self.aff.w),
            ("affinity.b", self.aff.b),
            *_lstm_param_list(self.lstm),
            ("fusion.wz", self.fuse.wz),
            ("fusion.bz", self.fuse.bz),
            ("fusion.wf", self.fuse.wf),
            ("fusion.bf", self.fuse.bf),
        ]

    def l2_weights(self):
        return [
            self.emb,
            self.aff.w,
            self.lstm.wi,
            self.lstm.wf,
            self.lstm.wo,
            self.lstm.wg,
            self.fuse.wz,
            self.fuse.wf,
        ]

    def forward(self, batch, with_records=False):
        return forward_siarn(batch, self, with_records=with_records)


class MiarnModel(SiarnModel):
    kind = "miarn"

    def __init__(self, emb, aff: MultiAffinityParams, lstm: LstmParams, fuse: FusionParams):
        self.emb = emb
        self.aff = aff
        self.lstm = lstm
        self.fuse = fuse

    @property
    def k(self):
        return self.aff.wq.shape[1]

    def parameters(self):
        return [
            ("embedding", self.emb),
            ("affinity.wq", self.aff.wq),
            ("affinity.bq", self.aff.bq),
            ("affinity.wp", self.aff.wp),
            ("affinity.bp", self.aff.bp),
            *_lstm_param_list(self.lstm),
            ("fusion.wz", self.fuse.wz),
            ("fusion.bz", self.fuse.bz),
            ("fusion.wf", self.fuse.wf),
            ("fusion.bf", self.fuse.bf),
        ]

    def l2_weights(self):
        return [
            self.emb,
            self.aff.wq,
            self.aff.wp,
            self.lstm.wi,
            self.lstm.wf,
            self.lstm.wo,
            self.lstm.wg,
            self.fuse.wz,
            self.fuse.wf,
        ]

    def forward(self, batch, with_records=False):
        return forward_miarn(batch, self, with_records=with_records)


class NbowModel(_ModelBase):
    kind = "nbow"

    def __init__(self, emb, out: OutputParams):
        self.emb = emb
        self.out = out

    def parameters(self):
        return [
            ("embedding", self.emb),
            ("output.w", self.out.w),
            ("output.b", self.out.b),
        ]

    def l2_weights(self):
        return [self.emb, self.out.w]

    def forward(self, batch, with_records=False):
        return forward_nbow(batch, self), None


class LstmModel(_ModelBase):
    kind = "lstm"

    def __init__(self, emb, lstm: LstmParams, out: OutputParams):
        self.emb = emb
        self.lstm = lstm
        self.out = out

    @property
    def hidden_dim(self):
        return self.lstm.hidden

    def parameters(self):
        return [
            ("embedding", self.emb),
            *_lstm_param_list(self.lstm),
            ("output.w", self.out.w),
            ("output.b", self.out.b),
        ]

    def l2_weights(self):
        return [
            self.emb,
            self.lstm.wi,
            self.lstm.wf,
            self.lstm.wo,
            self.lstm.wg,
            self.out.w,
        ]

    def forward(self, batch, with_records=False):
        return forward_lstm(batch, self), None


class AttLstmModel(_ModelBase):
    kind = "attlstm"

    def __init__(self, emb, lstm: LstmParams, attn: AttnParams, out: OutputParams):
        self.emb = emb
        self.lstm = lstm
        self.attn = attn
        self.out = out

    @property
    def hidden_dim(self):
        return self.lstm.hidden

    def parameters(self):
        return [
            ("embedding", self.emb),
            *_lstm_param_list(self.lstm),
            ("attn.w", self.attn.w),
            ("attn.b", self.attn.b),
            ("attn.u", self.attn.u),
            ("output.w", self.out.w),
            ("output.b", self.out.b),
        ]

    def l2_weights(self):
        return [
            self.emb,
            self.lstm.wi,
            self.lstm.wf,
            self.lstm.wo,
            self.lstm.wg,
            self.attn.w,
            self.attn.u,
            self.out.w,
        ]

    def forward(self, batch, with_records=False):
        return forward_attlstm(batch, self, with_records=with_records)


# ----------------------------------------------------------------------
# Forward passes
# ----------------------------------------------------------------------

def _doc_tokens(batch, row):
    return tuple(batch.tokens[row]) if batch.tokens is not None else None


def forward_siarn(batch, model: SiarnModel, with_records=True):
    return _forward_intra(batch, model, affinity_single, with_records)


def forward_miarn(batch, model: MiarnModel, with_records=True):
    return _forward_intra(batch, model, affinity_multi, with_records)


def _forward_intra(batch, model, affinity_fn, with_records):
    va_rows, vc_rows, records = [], [], []
    for r in range(batch.ids.shape[0]):
        ids = batch.ids[r]
        m = int(batch.valid_lens[r])
        W = embed(ids, model.emb)
        s, mask = affinity_fn(W, model.aff, m)
        a = intra_attention(s, mask, m)
        va_rows.append(attentive_rep(W, a))
        vc_rows.append(lstm_encode(W, model.lstm, m))
        if with_records:
            records.append(
                AttentionRecord(
                    ids=ids.copy(),
                    valid_len=m,
                    a=a.data.copy(),
                    s=s.data.copy(),
                    mask=mask.copy(),
                    tokens=_doc_tokens(batch, r),
                )
            )
    yhat = fuse_predict(stack_rows(va_rows), stack_rows(vc_rows), model.fuse)
    return yhat, (records if with_records else None)


def nbow_sum(W: Tensor, valid_len: int) -> Tensor:
    """Sum of the valid-prefix embedding rows as a (1, n) tensor."""
    sel = np.zeros((1, W.shape[0]), dtype=W.dtype)
    sel[0, : int(valid_len)] = 1
    return matmul(Tensor(sel), W)


def forward_nbow(batch, model: NbowModel) -> Tensor:
    rows = []
    for r in range(batch.ids.shape[0]):
        W = embed(batch.ids[r], model.emb)
        summed = nbow_sum(W, int(batch.valid_lens[r]))
        rows.append(reshape(summed, (W.shape[1],)))
    logits = add_rowvec(matmul(stack_rows(rows), model.out.w), model.out.b)
    return softmax_rows(logits)


def forward_lstm(batch, model: LstmModel) -> Tensor:
    rows = []
    for r in range(batch.ids.shape[0]):
        W = embed(batch.ids[r], model.emb)
        rows.append(lstm_encode(W, model.lstm, int(batch.valid_lens[r])))
    logits = add_rowvec(matmul(stack_rows(rows), model.out.w), model.out.b)
    return softmax_rows(logits)


def forward_attlstm(batch, model: AttLstmModel, with_records=True):
    rows, records = [], []
    ell = batch.ids.shape[1]
    for r in range(batch.ids.shape[0]):
        ids = batch.ids[r]
        m = int(batch.valid_lens[r])
        W = embed(ids, model.emb)
        states = lstm_states(W, model.lstm, m)
        h_valid = take_rows(states, np.arange(m))
        context, a = attend_states(h_valid, model.attn)
        rows.append(reshape(context, (model.hidden_dim,)))
        if with_records:
            padded = np.zeros(ell, dtype=a.dtype)
            padded[:m] = a.data
            records.append(
                AttentionRecord(
                    ids=ids.copy(),
                    valid_len=m,
                    a=padded,
                    tokens=_doc_tokens(batch, r),
                )
            )
    logits = add_rowvec(matmul(stack_rows(rows), model.out.w), model.out.b)
    return softmax_rows(logits), (records if with_records else None)


def forward(batch, model, with_records=False):
    """Kind-agnostic forward: always returns (probabilities, records-or-None)."""
    return model.forward(batch, with_records=with_records)


# ----------------------------------------------------------------------
# Initialization
# ----------------------------------------------------------------------

def _uniform_init(rng, shape, fan_in, dtype):
    bound = 1.0 / math.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape).astype(dtype), requires_grad=True)


def _zeros(shape, dtype):
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)


def _init_lstm(rng, n, d, dtype):
    def gate_w():
        return _uniform_init(rng, (d, n + d), n + d, dtype)

    return LstmParams(
        wi=gate_w(),
        wf=gate_w(),
        wo=gate_w(),
        wg=gate_w(),
        bi=_zeros((d,), dtype),
        bf=Tensor(np.ones(d, dtype=dtype), requires_grad=True),
        bo=_zeros((d,), dtype),
        bg=_zeros((d,), dtype),
    )


def _init_fusion(rng, n, d, dtype):
    return FusionParams(
        wz=_uniform_init(rng, (n + d, d), n + d, dtype),
        bz=_zeros((d,), dtype),
        wf=_uniform_init(rng, (d, 2), d, dtype),
        bf=_zeros((2,), dtype),
    )


def build_model(kind, vocab_size, n, d, rng, k=None, embedding=None, dtype=np.float32):
    """Construct a model of the given kind with freshly initialized weights.

    ``embedding`` may supply a pre-built (vocab_size, n) matrix (e.g. loaded
    from a pretrained-vector file); otherwise rows are U(-0.05, 0.05) with a
    zero PAD row.  All other weights are U(+-1/sqrt(fan_in)), biases zero
    except the LSTM forget bias (1).
    """
    if kind not in MODEL_KINDS:
        raise ValueError(f"unknown model kind {kind!r}, expected one of {MODEL_KINDS}")
    if embedding is None:
        embedding = corpus.init_embedding(vocab_size, n, rng)
    embedding = np.asarray(embedding, dtype=dtype)
    if embedding.shape != (vocab_size, n):
        raise ValueError(
            f"embedding shape {embedding.shape} does not match ({vocab_size}, {n})"
        )
    emb = Tensor(embedding.copy(), requires_grad=True)

    if kind == "siarn":
        aff = SingleAffinityParams(
            w=_uniform_init(rng, (2 * n, 1), 2 * n, dtype), b=_zeros((1,), dtype)
        )
        return SiarnModel(emb, aff, _init_lstm(rng, n, d, dtype), _init_fusion(rng, n, d, dtype))
    if kind == "miarn":
        if not k or k < 1:
            raise ValueError("miarn requires a positive pair-projection width k")
        aff = MultiAffinityParams(
            wq=_uniform_init(rng, (2 * n, k), 2 * n, dtype),
            bq=_zeros((k,), dtype),
            wp=_uniform_init(rng, (k, 1), k, dtype),
            bp=_zeros((1,), dtype),
        )
        return MiarnModel(emb, aff, _init_lstm(rng, n, d, dtype), _init_fusion(rng, n, d, dtype))
    if kind == "nbow":
        out = OutputParams(w=_uniform_init(rng, (n, 2), n, dtype), b=_zeros((2,), dtype))
        return NbowModel(emb, out)
    if kind == "lstm":
        out = OutputParams(w=_uniform_init(rng, (d, 2), d, dtype), b=_zeros((2,), dtype))
        return LstmModel(emb, _init_lstm(rng, n, d, dtype), out)
    # attlstm
    attn = AttnParams(
        w=_uniform_init(rng, (d, d), d, dtype),
        b=_zeros((d,), dtype),
        u=_uniform_init(rng, (d, 1), d, dtype),
    )
    out = OutputParams(w=_uniform_init(rng, (d, 2), d, dtype), b=_zeros((2,), dtype))
    return AttLstmModel(emb, _init_lstm(rng, n, d, dtype), attn, out)
