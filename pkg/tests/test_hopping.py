import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from amhop import autodiff as ad
from amhop.gru import EncodedModality
from amhop.hopping import (
    AUDIO,
    TEXT,
    VIDEO,
    AttentionParams,
    PerHopAttentionParams,
    attend,
    fuse_context,
    hop_schedule,
    run_hops,
    trace_to_jsonable,
)


def encoded(states: np.ndarray, length=None) -> EncodedModality:
    """Wrap raw hidden states as an encoder output (padding rows zeroed)."""
    states = np.asarray(states, dtype=np.float64)
    length = states.shape[0] if length is None else length
    padded = states.copy()
    padded[length:] = 0.0
    return EncodedModality(ad.constant(padded), ad.constant(states[length - 1]), length)


class TestFuseContext:
    def test_concatenation_order(self):
        out = fuse_context(ad.constant([1.0, 2.0]), ad.constant([3.0, 4.0]))
        assert_allclose(out.data, [1, 2, 3, 4])

    def test_zero_second_part(self):
        out = fuse_context(ad.constant([1.0, 2.0]), ad.constant([0.0, 0.0]))
        assert_allclose(out.data, [1, 2, 0, 0])

    def test_dim_arithmetic(self):
        out = fuse_context(ad.constant(np.ones(200)), ad.constant(np.ones(200)))
        assert out.shape == (400,)

    def test_mismatch(self):
        with pytest.raises(ad.ShapeMismatchError):
            fuse_context(ad.constant([1.0]), ad.constant([1.0, 2.0]))


class TestAttend:
    def test_identical_states_return_that_state(self):
        rng = np.random.default_rng(0)
        h = rng.uniform(-1, 1, 4)
        target = encoded(np.tile(h, (5, 1)))
        w = ad.constant(rng.uniform(-1, 1, (8, 4)))
        context = ad.constant(rng.uniform(-1, 1, 8))
        summary, weights = attend(context, target, w)
        assert_allclose(summary.data, h, atol=1e-12)
        assert abs(weights.data.sum() - 1.0) <= 1e-12

    def test_zero_scores_give_uniform_weights_and_mean(self):
        rng = np.random.default_rng(1)
        states = rng.uniform(-1, 1, (6, 4))
        target = encoded(states, length=4)
        w = ad.constant(np.zeros((8, 4)))
        context = ad.constant(rng.uniform(-1, 1, 8))
        summary, weights = attend(context, target, w)
        assert_allclose(weights.data[:4], np.full(4, 0.25), atol=1e-12)
        assert np.all(weights.data[4:] == 0.0)
        assert_allclose(summary.data, states[:4].mean(axis=0), atol=1e-12)

    def test_hand_built_log_scores(self):
        # Craft W so context^T W h_i = ln(i + 1) for basis-vector states; the
        # weights are then [1, 2, 3] / 6 and the summary is directly readable.
        states = np.eye(3)
        target = encoded(states)
        w = np.zeros((6, 3))
        w[0] = np.log([1.0, 2.0, 3.0])
        context = np.zeros(6)
        context[0] = 1.0
        summary, weights = attend(ad.constant(context), target, ad.constant(w))
        assert_allclose(weights.data, [1 / 6, 2 / 6, 3 / 6], rtol=1e-12)
        assert_allclose(summary.data, [1 / 6, 2 / 6, 3 / 6], rtol=1e-12)

    def test_empty_target_rejected(self):
        target = EncodedModality(ad.constant(np.zeros((2, 3))), ad.constant(np.zeros(3)), 0)
        with pytest.raises(ValueError):
            attend(ad.constant(np.zeros(6)), target, ad.constant(np.zeros((6, 3))))

    def test_gradients_through_attention(self):
        rng = np.random.default_rng(2)
        states = rng.uniform(-1, 1, (5, 4))
        target = encoded(states, length=3)
        w = ad.parameter(rng.uniform(-1, 1, (8, 4)))
        context = ad.constant(rng.uniform(-1, 1, 8))
        probe = ad.constant(rng.uniform(-1, 1, 4))

        def loss():
            summary, _ = attend(context, target, w)
            return ad.tsum(ad.mul(summary, probe))

        report = ad.grad_check(loss, {"w": w})
        assert report["w"] < 1e-4

    @settings(max_examples=100, deadline=None)
    @given(st.data())
    def test_contract_properties(self, data):
        seed = data.draw(st.integers(0, 10_000))
        rng = np.random.default_rng(seed)
        t_steps = data.draw(st.integers(1, 8))
        length = data.draw(st.integers(1, t_steps))
        d_h = data.draw(st.integers(1, 6))
        states = rng.uniform(-1, 1, (t_steps, d_h))
        target = encoded(states, length=length)
        w = ad.constant(rng.uniform(-1, 1, (2 * d_h, d_h)))
        context = ad.constant(rng.uniform(-1, 1, 2 * d_h))
        summary, weights = attend(context, target, w)
        wd = weights.data
        assert abs(wd.sum() - 1.0) <= 1e-12
        assert np.all(wd >= 0)
        assert np.all(wd[length:] == 0.0)
        valid = states[:length]
        assert np.all(summary.data >= valid.min(axis=0) - 1e-12)
        assert np.all(summary.data <= valid.max(axis=0) + 1e-12)

    def test_permutation_invariance_of_summary(self):
        rng = np.random.default_rng(3)
        states = rng.uniform(-1, 1, (6, 5))
        w = ad.constant(rng.uniform(-1, 1, (10, 5)))
        context = ad.constant(rng.uniform(-1, 1, 10))
        summary, weights = attend(context, encoded(states), w)
        perm = rng.permutation(6)
        summary_p, weights_p = attend(context, encoded(states[perm]), w)
        assert_allclose(weights_p.data, weights.data[perm], atol=1e-12)
        assert_allclose(summary_p.data, summary.data, atol=1e-12)


class TestHopSchedule:
    def test_three_hop_table(self):
        entries = [(e.hop_index, e.target, e.context) for e in hop_schedule(3)]
        assert entries == [
            (1, VIDEO, (AUDIO, TEXT)),
            (2, AUDIO, (TEXT, VIDEO)),
            (3, TEXT, (AUDIO, VIDEO)),
        ]

    def test_fourth_hop_returns_to_video(self):
        entry = hop_schedule(4)[3]
        assert entry.target == VIDEO
        assert entry.context == (AUDIO, TEXT)

    def test_seven_hop_targets(self):
        targets = [e.target for e in hop_schedule(7)]
        assert targets == [VIDEO, AUDIO, TEXT, VIDEO, AUDIO, TEXT, VIDEO]

    @pytest.mark.parametrize("n", range(1, 10))
    def test_update_counts_balanced(self, n):
        targets = [e.target for e in hop_schedule(n)]
        counts = {m: targets.count(m) for m in (AUDIO, TEXT, VIDEO)}
        assert sum(counts.values()) == n
        assert max(counts.values()) - min(counts.values()) <= 1

    def test_rejects_zero_hops(self):
        with pytest.raises(ValueError):
            hop_schedule(0)


def random_encodings(rng, d_h=4, lengths=(3, 2, 4)):
    return tuple(encoded(rng.uniform(-1, 1, (t, d_h))) for t in lengths)


class TestRunHops:
    def test_single_hop_changes_only_video_slot(self):
        rng = np.random.default_rng(4)
        enc_a, enc_t, enc_v = random_encodings(rng)
        params = AttentionParams.init(4, rng)
        fused, trace = run_hops(enc_a, enc_t, enc_v, params, 1)
        assert_allclose(fused.data[:4], enc_a.last_state.data)
        assert_allclose(fused.data[4:8], enc_t.last_state.data)
        assert not np.allclose(fused.data[8:], enc_v.last_state.data)
        assert len(trace) == 1 and trace[0].entry.target == VIDEO

    def test_length_one_modalities_fused_unchanged_any_hops(self):
        rng = np.random.default_rng(5)
        enc_a, enc_t, enc_v = random_encodings(rng, lengths=(1, 1, 1))
        params = AttentionParams.init(4, rng)
        expected = np.concatenate(
            [enc_a.last_state.data, enc_t.last_state.data, enc_v.last_state.data]
        )
        for n in (1, 2, 3, 5, 9):
            fused, _ = run_hops(enc_a, enc_t, enc_v, params, n)
            assert_allclose(fused.data, expected, atol=1e-12)

    def test_two_hops_match_manual_composition(self):
        # Independent numpy unroll of hop 1 (target V, context A,T) then
        # hop 2 (target A, context T, new V summary) on a 2-step toy.
        rng = np.random.default_rng(6)
        d_h = 3
        enc_a, enc_t, enc_v = random_encodings(rng, d_h=d_h, lengths=(2, 2, 2))
        params = AttentionParams.init(d_h, rng)

        def np_softmax(x):
            e = np.exp(x - x.max())
            return e / e.sum()

        h_a = enc_a.hidden_states.data
        h_t = enc_t.hidden_states.data
        h_v = enc_v.hidden_states.data
        c1 = np.concatenate([h_a[-1], h_t[-1]])
        w1 = np_softmax(h_v @ (c1 @ params.w_v.data))
        summary_v = w1 @ h_v
        c2 = np.concatenate([h_t[-1], summary_v])
        w2 = np_softmax(h_a @ (c2 @ params.w_a.data))
        summary_a = w2 @ h_a
        expected = np.concatenate([summary_a, h_t[-1], summary_v])

        fused, trace = run_hops(enc_a, enc_t, enc_v, params, 2)
        assert_allclose(fused.data, expected, atol=1e-12)
        assert_allclose(trace[0].weights, w1, atol=1e-12)
        assert_allclose(trace[1].weights, w2, atol=1e-12)

    @pytest.mark.parametrize("n", [1, 2, 3, 7])
    def test_trace_weights_valid_per_hop(self, n):
        rng = np.random.default_rng(7)
        enc_a, enc_t, enc_v = random_encodings(rng, lengths=(5, 3, 4))
        params = AttentionParams.init(4, rng)
        lengths = {AUDIO: 5, TEXT: 3, VIDEO: 4}
        _, trace = run_hops(enc_a, enc_t, enc_v, params, n)
        assert len(trace) == n
        for rec in trace:
            assert abs(rec.weights.sum() - 1.0) <= 1e-12
            assert np.all(rec.weights >= 0)
            assert np.all(rec.weights[lengths[rec.entry.target] :] == 0.0)

    def test_mismatched_hidden_dims_rejected(self):
        rng = np.random.default_rng(8)
        enc_a, enc_t, _ = random_encodings(rng, d_h=4)
        enc_v = encoded(rng.uniform(-1, 1, (3, 5)))
        params = AttentionParams.init(4, rng)
        with pytest.raises(ad.ShapeMismatchError):
            run_hops(enc_a, enc_t, enc_v, params, 1)

    @pytest.mark.parametrize("n", [1, 3, 7])
    def test_attention_weights_gradient_check(self, n):
        rng = np.random.default_rng(9)
        enc_args = random_encodings(rng, d_h=3, lengths=(3, 2, 3))
        params = AttentionParams.init(3, rng)
        probe = ad.constant(rng.uniform(-1, 1, 9))

        def loss():
            fused, _ = run_hops(*enc_args, params, n)
            return ad.tsum(ad.mul(fused, probe))

        report = ad.grad_check(loss, params.named())
        assert max(report.values()) < 1e-4

    def test_per_hop_attention_variant(self):
        rng = np.random.default_rng(10)
        enc_args = random_encodings(rng, d_h=3, lengths=(3, 2, 3))
        params = PerHopAttentionParams.init(3, 4, rng)
        probe = ad.constant(rng.uniform(-1, 1, 9))

        def loss():
            fused, _ = run_hops(*enc_args, params, 4)
            return ad.tsum(ad.mul(fused, probe))

        report = ad.grad_check(loss, params.named())
        assert len(report) == 4
        assert max(report.values()) < 1e-4


def test_trace_export_is_json_serializable():
    rng = np.random.default_rng(11)
    enc_a, enc_t, enc_v = random_encodings(rng)
    params = AttentionParams.init(4, rng)
    _, trace = run_hops(enc_a, enc_t, enc_v, params, 3)
    payload = trace_to_jsonable("sample-1", trace)
    text = json.dumps(payload)
    parsed = json.loads(text)
    assert parsed["sample_id"] == "sample-1"
    assert [h["hop"] for h in parsed["hops"]] == [1, 2, 3]
    assert [h["target"] for h in parsed["hops"]] == [VIDEO, AUDIO, TEXT]
