"""Model layers against loop oracles, spec'd edge cases, and gradient checks."""

import math

import numpy as np
import pytest

from miarn import corpus, model
from miarn.model import (
    AttnParams,
    FusionParams,
    MultiAffinityParams,
    SingleAffinityParams,
    affinity_multi,
    affinity_single,
    attend_states,
    attentive_rep,
    build_model,
    embed,
    fuse_predict,
    intra_attention,
    loss,
    lstm_encode,
    nbow_sum,
)
from miarn.numerics import Graph, Tensor, grad_check, ops, substream

from conftest import (
    conditioned_gradcheck_model,
    gradcheck_loss_fn,
    random_batch,
)


def t64(data, requires_grad=False):
    return Tensor(np.asarray(data, dtype=np.float64), requires_grad=requires_grad)


# ----------------------------------------------------------------------
# embed
# ----------------------------------------------------------------------

class TestEmbed:
    def test_rows_and_pad(self):
        e = t64([[0.0, 0.0], [9.0, 9.0], [1.0, 2.0]])
        out = embed(np.array([2, 0]), e)
        np.testing.assert_array_equal(out.data, [[1.0, 2.0], [0.0, 0.0]])

    def test_all_pad_row_is_zero_matrix(self):
        e = Tensor(corpus.init_embedding(5, 3, substream(0, "init")))
        out = embed(np.zeros(4, dtype=np.int64), e)
        np.testing.assert_array_equal(out.data, np.zeros((4, 3)))

    def test_repeated_token_gets_doubled_gradient(self):
        e = t64(np.ones((4, 2)), requires_grad=True)
        with Graph() as g:
            out = embed(np.array([2, 2, 1]), e)
            total = ops.sum_all(out)
        g.backward(total)
        np.testing.assert_array_equal(e.grad[2], [2.0, 2.0])
        np.testing.assert_array_equal(e.grad[1], [1.0, 1.0])

    def test_out_of_range_id(self):
        e = t64(np.ones((3, 2)))
        with pytest.raises(IndexError):
            embed(np.array([0, 3]), e)


# ----------------------------------------------------------------------
# affinity
# ----------------------------------------------------------------------

def single_oracle(w_rows, w_a, b_a, m, ell):
    """Definitional pair-by-pair scoring."""
    s = np.zeros((ell, ell))
    mask = np.zeros((ell, ell), dtype=bool)
    for i in range(m):
        for j in range(i + 1, m):
            val = np.concatenate([w_rows[i], w_rows[j]]) @ w_a[:, 0] + b_a[0]
            s[i, j] = s[j, i] = val
            mask[i, j] = mask[j, i] = True
    return s, mask


def multi_oracle(w_rows, p, m, ell):
    s = np.zeros((ell, ell))
    mask = np.zeros((ell, ell), dtype=bool)
    for i in range(m):
        for j in range(i + 1, m):
            pair = np.concatenate([w_rows[i], w_rows[j]])
            hid = np.maximum(pair @ p.wq.data + p.bq.data, 0.0)
            val = hid @ p.wp.data[:, 0] + p.bp.data[0]
            s[i, j] = s[j, i] = val
            mask[i, j] = mask[j, i] = True
    return s, mask


class TestAffinitySingle:
    def test_all_ones_weights_sum_pair(self):
        W = t64([[1.0, 0.0], [0.0, 1.0]])
        p = SingleAffinityParams(w=t64(np.ones((4, 1))), b=t64([0.0]))
        s, mask = affinity_single(W, p, 2)
        assert s.data[0, 1] == s.data[1, 0] == 2.0

    def test_bias_only(self):
        W = t64(np.zeros((3, 2)))
        p = SingleAffinityParams(w=t64(np.zeros((4, 1))), b=t64([5.0]))
        s, mask = affinity_single(W, p, 3)
        assert (s.data[mask] == 5.0).all()

    def test_matches_pairwise_loop(self):
        for seed in range(25):
            rng = np.random.default_rng(seed)
            ell, n = 7, 3
            m = int(rng.integers(2, ell + 1))
            W = t64(rng.normal(size=(ell, n)))
            p = SingleAffinityParams(
                w=t64(rng.normal(size=(2 * n, 1))), b=t64(rng.normal(size=1))
            )
            s, mask = affinity_single(W, p, m)
            want_s, want_mask = single_oracle(W.data, p.w.data, p.b.data, m, ell)
            np.testing.assert_array_equal(mask, want_mask)
            np.testing.assert_allclose(s.data, want_s, atol=1e-12)

    def test_symmetry_exact_and_masking(self):
        rng = np.random.default_rng(0)
        W = t64(rng.normal(size=(6, 4)))
        p = SingleAffinityParams(w=t64(rng.normal(size=(8, 1))), b=t64([0.3]))
        s, mask = affinity_single(W, p, 4)
        assert np.array_equal(s.data, s.data.T)
        assert not mask.diagonal().any()
        assert not mask[4:].any() and not mask[:, 4:].any()  # PAD pairs masked

    def test_single_token_has_no_pairs(self):
        W = t64(np.ones((3, 2)))
        p = SingleAffinityParams(w=t64(np.ones((4, 1))), b=t64([0.0]))
        s, mask = affinity_single(W, p, 1)
        assert not mask.any()


class TestAffinityMulti:
    def test_relu_of_ones_sums_to_k(self):
        k, n = 4, 2
        W = t64(np.zeros((3, n)))
        p = MultiAffinityParams(
            wq=t64(np.zeros((2 * n, k))),
            bq=t64(np.ones(k)),
            wp=t64(np.ones((k, 1))),
            bp=t64([0.0]),
        )
        s, mask = affinity_multi(W, p, 3)
        assert (s.data[mask] == k).all()

    def test_saturated_relu_leaves_output_bias(self):
        k, n = 3, 2
        W = t64(np.ones((3, n)))
        p = MultiAffinityParams(
            wq=t64(np.zeros((2 * n, k))),
            bq=t64(np.full(k, -100.0)),
            wp=t64(np.ones((k, 1))),
            bp=t64([0.25]),
        )
        s, mask = affinity_multi(W, p, 2)
        assert (s.data[mask] == 0.25).all()

    def test_matches_pairwise_loop(self):
        for seed in range(25):
            rng = np.random.default_rng(seed)
            ell, n, k = 6, 3, 4
            m = int(rng.integers(2, ell + 1))
            W = t64(rng.normal(size=(ell, n)))
            p = MultiAffinityParams(
                wq=t64(rng.normal(size=(2 * n, k))),
                bq=t64(rng.normal(size=k)),
                wp=t64(rng.normal(size=(k, 1))),
                bp=t64(rng.normal(size=1)),
            )
            s, mask = affinity_multi(W, p, m)
            want_s, want_mask = multi_oracle(W.data, p, m, ell)
            np.testing.assert_array_equal(mask, want_mask)
            np.testing.assert_allclose(s.data, want_s, atol=1e-12)


# ----------------------------------------------------------------------
# attention
# ----------------------------------------------------------------------

class TestIntraAttention:
    def test_two_tokens_share_weight(self):
        s = t64([[0.0, 2.0, 0.0], [2.0, 0.0, 0.0], [0.0, 0.0, 0.0]])
        mask = np.zeros((3, 3), dtype=bool)
        mask[0, 1] = mask[1, 0] = True
        a = intra_attention(s, mask, 2)
        np.testing.assert_allclose(a.data, [0.5, 0.5, 0.0])

    def test_row_maxes_softmax(self):
        s = t64([[0.0, 1.0], [0.0, 0.0]])
        mask = ~np.eye(2, dtype=bool)
        a = intra_attention(s, mask, 2)
        np.testing.assert_allclose(a.data, [0.73106, 0.26894], atol=1e-5)

    def test_single_valid_token_gets_all_weight(self):
        W = t64(np.ones((4, 2)))
        p = SingleAffinityParams(w=t64(np.ones((4, 1))), b=t64([0.0]))
        s, mask = affinity_single(W, p, 1)
        a = intra_attention(s, mask, 1)
        np.testing.assert_array_equal(a.data, [1.0, 0.0, 0.0, 0.0])

    def test_masked_cells_never_influence_attention(self):
        rng = np.random.default_rng(4)
        W = t64(rng.normal(size=(6, 3)))
        p = SingleAffinityParams(w=t64(rng.normal(size=(6, 1))), b=t64([0.1]))
        s, mask = affinity_single(W, p, 4)
        a = intra_attention(s, mask, 4)
        poisoned = s.data.copy()
        poisoned[~mask] = 1e6  # diagonal and PAD cells
        a2 = intra_attention(t64(poisoned), mask, 4)
        np.testing.assert_array_equal(a.data, a2.data)


class TestAttentiveRep:
    def test_one_hot_selects_row(self):
        W = t64([[1.0, 2.0], [3.0, 4.0], [0.0, 0.0]])
        a = t64([0.0, 1.0, 0.0])
        np.testing.assert_array_equal(attentive_rep(W, a).data, [3.0, 4.0])

    def test_uniform_over_two_is_midpoint(self):
        W = t64([[2.0, 0.0], [0.0, 2.0], [9.0, 9.0]])
        a = t64([0.5, 0.5, 0.0])
        np.testing.assert_allclose(attentive_rep(W, a).data, [1.0, 1.0])

    def test_matches_loop(self):
        rng = np.random.default_rng(8)
        W = t64(rng.normal(size=(5, 3)))
        a_np = rng.random(5)
        a_np /= a_np.sum()
        got = attentive_rep(W, t64(a_np)).data
        want = sum(a_np[i] * W.data[i] for i in range(5))
        np.testing.assert_allclose(got, want, atol=1e-12)


# ----------------------------------------------------------------------
# lstm ops at the model surface
# ----------------------------------------------------------------------

def make_lstm_params(rng, n, d, dtype=np.float64, zero=False):
    def mk(shape):
        data = np.zeros(shape) if zero else rng.normal(size=shape) * 0.4
        return Tensor(data.astype(dtype), requires_grad=True)

    return model.LstmParams(
        wi=mk((d, n + d)), wf=mk((d, n + d)), wo=mk((d, n + d)), wg=mk((d, n + d)),
        bi=mk((d,)), bf=mk((d,)), bo=mk((d,)), bg=mk((d,)),
    )


class TestLstmEncode:
    def test_all_zero_gives_zero_state(self):
        rng = np.random.default_rng(0)
        p = make_lstm_params(rng, 3, 4, zero=True)
        W = t64(np.zeros((5, 3)))
        out = lstm_encode(W, p, 5)
        np.testing.assert_array_equal(out.data, np.zeros(4))

    def test_single_step_matches_hand_recurrence(self):
        rng = np.random.default_rng(1)
        n, d = 3, 2
        p = make_lstm_params(rng, n, d)
        x = rng.normal(size=(4, n))
        out = lstm_encode(t64(x), p, 1)
        z = np.concatenate([x[0], np.zeros(d)])
        sig = lambda v: 1 / (1 + np.exp(-v))
        i = sig(p.wi.data @ z + p.bi.data)
        f = sig(p.wf.data @ z + p.bf.data)
        o = sig(p.wo.data @ z + p.bo.data)
        g = np.tanh(p.wg.data @ z + p.bg.data)
        c = i * g
        np.testing.assert_allclose(out.data, o * np.tanh(c), atol=1e-12)

    def test_three_steps_match_independent_recurrence(self):
        rng = np.random.default_rng(2)
        n, d = 4, 3
        p = make_lstm_params(rng, n, d)
        x = rng.normal(size=(6, n))
        got = lstm_encode(t64(x), p, 3).data
        sig = lambda v: 1 / (1 + np.exp(-v))
        h, c = np.zeros(d), np.zeros(d)
        for t in range(3):
            z = np.concatenate([x[t], h])
            i = sig(p.wi.data @ z + p.bi.data)
            f = sig(p.wf.data @ z + p.bf.data)
            o = sig(p.wo.data @ z + p.bo.data)
            g = np.tanh(p.wg.data @ z + p.bg.data)
            c = f * c + i * g
            h = o * np.tanh(c)
        np.testing.assert_allclose(got, h, atol=1e-12)

    def test_pad_steps_never_executed(self):
        rng = np.random.default_rng(3)
        p = make_lstm_params(rng, 3, 4)
        x = rng.normal(size=(6, 3))
        short = lstm_encode(t64(x), p, 3).data
        x2 = x.copy()
        x2[3:] = 123.0  # garbage beyond valid_len must not matter
        np.testing.assert_array_equal(short, lstm_encode(t64(x2), p, 3).data)


# ----------------------------------------------------------------------
# fusion and loss
# ----------------------------------------------------------------------

def make_fusion(n, d, wf=None, bf=None):
    return FusionParams(
        wz=t64(np.zeros((n + d, d))),
        bz=t64(np.zeros(d)),
        wf=t64(wf if wf is not None else np.zeros((d, 2))),
        bf=t64(bf if bf is not None else np.zeros(2)),
    )


class TestFusePredict:
    def test_zero_head_gives_uniform(self):
        p = make_fusion(3, 4)
        out = fuse_predict(t64(np.ones(3)), t64(np.ones(4)), p)
        np.testing.assert_allclose(out.data, [0.5, 0.5])

    def test_bias_log3_gives_three_quarters(self):
        p = make_fusion(3, 4, bf=np.array([math.log(3.0), 0.0]))
        out = fuse_predict(t64(np.ones(3)), t64(np.ones(4)), p)
        np.testing.assert_allclose(out.data, [0.75, 0.25], atol=1e-12)

    def test_rows_normalize(self):
        rng = np.random.default_rng(0)
        p = FusionParams(
            wz=t64(rng.normal(size=(7, 4))),
            bz=t64(rng.normal(size=4)),
            wf=t64(rng.normal(size=(4, 2))),
            bf=t64(rng.normal(size=2)),
        )
        out = fuse_predict(t64(rng.normal(size=(9, 3))), t64(rng.normal(size=(9, 4))), p)
        np.testing.assert_allclose(out.data.sum(axis=1), np.ones(9), atol=1e-7)
        assert (out.data >= 0).all()


class TestLoss:
    def test_perfect_predictions_hit_clamp_floor(self):
        yhat = t64([[0.0, 1.0], [1.0, 0.0]])
        total = loss(yhat, [1, 0], 0.0, [])
        want = -2 * math.log(1 - 1e-7)
        assert float(total.data) == pytest.approx(want, rel=1e-9)

    def test_half_probability_is_log_two(self):
        yhat = t64([[0.5, 0.5]])
        total = loss(yhat, [1], 0.0, [])
        assert float(total.data) == pytest.approx(math.log(2.0), rel=1e-12)

    def test_zero_weights_make_zero_penalty(self):
        yhat = t64([[0.5, 0.5]])
        zero_w = t64(np.zeros((3, 3)), requires_grad=True)
        with_reg = loss(yhat, [1], 1.0, [zero_w])
        without = loss(yhat, [1], 0.0, [])
        assert float(with_reg.data) == pytest.approx(float(without.data), rel=1e-12)

    def test_penalty_scales_with_lambda(self):
        yhat = t64([[0.5, 0.5]])
        w = t64(np.full((2, 2), 2.0), requires_grad=True)
        j0 = float(loss(yhat, [1], 0.0, [w]).data)
        j1 = float(loss(yhat, [1], 0.5, [w]).data)
        assert j1 - j0 == pytest.approx(0.5 * 16.0, rel=1e-12)


# ----------------------------------------------------------------------
# whole-model forwards
# ----------------------------------------------------------------------

class TestForwards:
    @pytest.mark.parametrize("kind", model.MODEL_KINDS)
    def test_outputs_are_distributions(self, kind):
        rng = substream(0, f"fwd-{kind}")
        net = build_model(kind, 30, 8, 8, rng, k=4)
        batch = random_batch(np.random.default_rng(0), 50, 10, 30, min_len=1)
        yhat, _ = net.forward(batch)
        assert yhat.shape == (50, 2)
        np.testing.assert_allclose(yhat.data.sum(axis=1), np.ones(50), atol=1e-6)
        assert (yhat.data >= 0).all()

    def test_miarn_constructed_to_emulate_siarn(self):
        rng = substream(1, "emulate")
        siarn = build_model("siarn", 20, 6, 6, rng, dtype=np.float64)
        miarn = build_model("miarn", 20, 6, 6, rng, k=1, dtype=np.float64)
        # share every non-affinity tensor, then pick multi params that reduce
        # to the linear score: ReLU(w x + C) - C == w x for large C
        miarn.emb = siarn.emb
        miarn.lstm = siarn.lstm
        miarn.fuse = siarn.fuse
        shift = 100.0
        miarn.aff = MultiAffinityParams(
            wq=t64(siarn.aff.w.data.copy()),
            bq=t64([shift]),
            wp=t64([[1.0]]),
            bp=t64([-shift]),
        )
        batch = random_batch(np.random.default_rng(2), 12, 8, 20)
        y1, rec1 = siarn.forward(batch, with_records=True)
        y2, rec2 = miarn.forward(batch, with_records=True)
        for r1, r2 in zip(rec1, rec2):
            assert int(r1.a.argmax()) == int(r2.a.argmax())
            np.testing.assert_allclose(r1.a, r2.a, atol=1e-10)
        np.testing.assert_allclose(y1.data, y2.data, atol=1e-10)

    def test_attentive_view_permutation_invariant_lstm_view_not(self):
        # the attention aggregation (row max -> softmax -> weighted sum) is
        # bag-like: permuting tokens together with their affinity matrix
        # leaves v_a unchanged, while the recurrent view depends on order
        rng = substream(3, "perm")
        net = build_model("siarn", 25, 6, 6, rng, dtype=np.float64)
        ids = np.array([4, 9, 2, 17, 11], dtype=np.int32)
        perm = np.array([3, 0, 4, 2, 1])

        W1 = embed(ids, net.emb)
        s1, mask1 = affinity_single(W1, net.aff, len(ids))
        a1 = intra_attention(s1, mask1, len(ids))
        va1 = attentive_rep(W1, a1)

        W2 = embed(ids[perm], net.emb)
        s2 = t64(s1.data[np.ix_(perm, perm)])
        mask2 = mask1[np.ix_(perm, perm)]
        a2 = intra_attention(s2, mask2, len(ids))
        va2 = attentive_rep(W2, a2)

        np.testing.assert_allclose(a2.data, a1.data[perm], atol=1e-12)
        np.testing.assert_allclose(va1.data, va2.data, atol=1e-12)

        vc1 = lstm_encode(W1, net.lstm, len(ids))
        vc2 = lstm_encode(W2, net.lstm, len(ids))
        assert np.abs(vc1.data - vc2.data).max() > 1e-4

    def test_padding_extension_changes_nothing_measurable(self):
        rng = substream(4, "pad")
        net = build_model("miarn", 30, 8, 8, rng, k=4)
        base = random_batch(np.random.default_rng(5), 20, 10, 30)
        extended = corpus.Batch(
            ids=np.concatenate(
                [base.ids, np.zeros((20, 10), dtype=np.int32)], axis=1
            ),
            valid_lens=base.valid_lens,
            labels=base.labels,
        )
        y1, _ = net.forward(base)
        y2, _ = net.forward(extended)
        assert np.abs(y1.data - y2.data).max() < 1e-6

    def test_attention_records_are_probability_vectors(self):
        rng = substream(5, "records")
        for kind in model.ATTENTION_KINDS:
            net = build_model(kind, 30, 8, 8, rng, k=4)
            batch = random_batch(np.random.default_rng(6), 10, 8, 30, min_len=1)
            _, records = net.forward(batch, with_records=True)
            for rec, m in zip(records, batch.valid_lens):
                assert abs(rec.a.sum() - 1.0) <= 1e-6
                assert (rec.a[int(m):] == 0).all()
                assert (rec.a >= 0).all()


class TestNbow:
    def test_single_valid_token(self):
        e = t64([[0.0, 0.0], [0.0, 0.0], [3.0, 4.0]])
        W = embed(np.array([2, 0, 0]), e)
        out = nbow_sum(W, 1)
        np.testing.assert_array_equal(out.data, [[3.0, 4.0]])

    def test_doubling_token_doubles_contribution(self):
        e = t64(np.arange(10.0).reshape(5, 2))
        once = nbow_sum(embed(np.array([3, 0]), e), 1).data
        twice = nbow_sum(embed(np.array([3, 3]), e), 2).data
        np.testing.assert_array_equal(twice, 2 * once)

    def test_matches_loop(self):
        rng = np.random.default_rng(0)
        e = t64(rng.normal(size=(8, 3)))
        ids = np.array([2, 5, 7, 2, 0, 0])
        out = nbow_sum(embed(ids, e), 4).data[0]
        want = e.data[2] + e.data[5] + e.data[7] + e.data[2]
        np.testing.assert_allclose(out, want, atol=1e-12)


class TestAttLstm:
    def test_uniform_scores_average_states(self):
        d = 4
        h = np.random.default_rng(0).normal(size=(5, d))
        p = AttnParams(w=t64(np.zeros((d, d))), b=t64(np.zeros(d)), u=t64(np.ones((d, 1))))
        context, a = attend_states(t64(h), p)
        np.testing.assert_allclose(a.data, np.full(5, 0.2), atol=1e-12)
        np.testing.assert_allclose(context.data[0], h.mean(axis=0), atol=1e-12)

    def test_dominant_score_selects_state(self):
        d = 3
        h = np.zeros((4, d))
        h[1] = [1.0, 0.0, 0.0]
        p = AttnParams(
            w=t64(np.eye(d) * 50.0),
            b=t64(np.zeros(d)),
            u=t64(np.array([[20.0], [0.0], [0.0]])),
        )
        context, a = attend_states(t64(h), p)
        assert a.data[1] > 0.999
        np.testing.assert_allclose(context.data[0], h[1], atol=1e-3)

    def test_attention_sums_to_one(self):
        rng = np.random.default_rng(1)
        p = AttnParams(
            w=t64(rng.normal(size=(4, 4))),
            b=t64(rng.normal(size=4)),
            u=t64(rng.normal(size=(4, 1))),
        )
        _, a = attend_states(t64(rng.normal(size=(6, 4))), p)
        assert a.data.sum() == pytest.approx(1.0, abs=1e-12)


# ----------------------------------------------------------------------
# end-to-end gradients
# ----------------------------------------------------------------------

class TestEndToEndGradients:
    @pytest.mark.parametrize("kind", ["siarn", "miarn"])
    def test_intra_attention_models(self, kind):
        net, rng = conditioned_gradcheck_model(kind, seed=11)
        batch = random_batch(rng, 2, 6, 12)
        err = grad_check(gradcheck_loss_fn(net, batch), [t for _, t in net.parameters()], 1e-5)
        assert err < 1e-4

    @pytest.mark.parametrize("kind", ["nbow", "lstm", "attlstm"])
    def test_baseline_models(self, kind):
        net, rng = conditioned_gradcheck_model(kind, seed=12)
        batch = random_batch(rng, 2, 6, 12)
        err = grad_check(gradcheck_loss_fn(net, batch), [t for _, t in net.parameters()], 1e-5)
        assert err < 1e-4
