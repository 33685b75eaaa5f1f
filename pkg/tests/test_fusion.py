"""Fusion MLPs, attention pooling, gated blending, and the decoder."""
import numpy as np
import pytest

from kgcmp.autodiff import Tensor, ShapeError, gather, reshape, tsum
from kgcmp.fusion import (
    FusionParams, decode_scores, dtaf_fuse, dtaf_pool, dtaf_pool_all,
    fuse_channels,
)
from kgcmp.optim import check_gradients


def make_params(dim=3, text_dim=4, k=1, seed=0, mode="attention"):
    return FusionParams(np.random.default_rng(seed), dim, text_dim,
                        n_query_tokens=k, decoder_mode=mode)


class TestFuseChannels:
    def test_output_matches_manual_mlp(self):
        params = make_params()
        rng = np.random.default_rng(1)
        rel_q, rel_g = rng.normal(size=(2, 2, 3))
        ent_q, ent_g = rng.normal(size=(2, 5, 3))
        rel, ent = fuse_channels(params, Tensor(rel_q), Tensor(rel_g),
                                 Tensor(ent_q), Tensor(ent_g))

        def mlp(x, w1, b1, w2, b2):
            return np.maximum(x @ w1.data + b1.data, 0.0) @ w2.data + b2.data

        np.testing.assert_allclose(
            rel.data, mlp(np.concatenate([rel_q, rel_g], axis=-1),
                          params.rel_w1, params.rel_b1,
                          params.rel_w2, params.rel_b2), atol=1e-12)
        np.testing.assert_allclose(
            ent.data, mlp(np.concatenate([ent_q, ent_g], axis=-1),
                          params.ent_w1, params.ent_b1,
                          params.ent_w2, params.ent_b2), atol=1e-12)

    def test_mismatched_dims_rejected(self):
        params = make_params()
        a = Tensor(np.zeros((2, 3)))
        b = Tensor(np.zeros((2, 4)))
        with pytest.raises(ShapeError):
            fuse_channels(params, a, b, a, a)


class TestAttentionPooling:
    def test_single_token_pools_to_its_projection(self):
        params = make_params()
        token = np.random.default_rng(2).normal(size=(1, 4))
        pooled = dtaf_pool(params, token)
        expected = token[0] @ params.text_kv.data + params.text_kv_bias.data
        np.testing.assert_allclose(pooled.data, expected, atol=1e-12)

    def test_repeated_token_pools_like_one(self):
        params = make_params()
        token = np.random.default_rng(3).normal(size=(1, 4))
        once = dtaf_pool(params, token)
        many = dtaf_pool(params, np.repeat(token, 7, axis=0))
        np.testing.assert_allclose(many.data, once.data, atol=1e-9)

    def test_identical_query_slots_match_single_slot(self):
        params2 = make_params(k=2, seed=4)
        params2.q_token.data[1] = params2.q_token.data[0]
        params1 = make_params(k=1, seed=4)
        params1.q_token.data[:] = params2.q_token.data[:1]
        params1.text_kv.data[:] = params2.text_kv.data
        params1.text_kv_bias.data[:] = params2.text_kv_bias.data
        tokens = np.random.default_rng(5).normal(size=(6, 4))
        np.testing.assert_allclose(dtaf_pool(params2, tokens).data,
                                   dtaf_pool(params1, tokens).data, atol=1e-12)

    def test_empty_sequence_pools_to_zeros(self):
        params = make_params()
        np.testing.assert_array_equal(dtaf_pool(params, np.zeros((0, 4))).data,
                                      np.zeros(3))

    def test_batched_pooling_matches_per_sequence(self):
        params = make_params(k=2, seed=6)
        rng = np.random.default_rng(7)
        seqs = [rng.normal(size=(n, 4)) for n in (3, 1, 3, 0, 2)]
        all_pooled = dtaf_pool_all(params, seqs)
        assert all_pooled.shape == (5, 3)
        for i, seq in enumerate(seqs):
            np.testing.assert_allclose(all_pooled.data[i],
                                       dtaf_pool(params, seq).data, atol=1e-12)


class TestGatedBlend:
    def setup_method(self):
        self.params = make_params()
        rng = np.random.default_rng(8)
        self.text_rel = Tensor(rng.normal(size=(2, 3)))
        self.text_ent = Tensor(rng.normal(size=(5, 3)))
        self.rel_cmp = Tensor(rng.normal(size=(2, 3)))
        self.ent_cmp = Tensor(rng.normal(size=(5, 3)))

    def blend(self):
        return dtaf_fuse(self.params, self.text_rel, self.text_ent,
                         self.rel_cmp, self.ent_cmp)

    def test_open_gate_recovers_text(self):
        self.params.gate_a.data = np.asarray(30.0)
        self.params.gate_b.data = np.asarray(30.0)
        rel_f, ent_f = self.blend()
        np.testing.assert_allclose(rel_f.data, self.text_rel.data, atol=1e-9)
        np.testing.assert_allclose(ent_f.data, self.text_ent.data, atol=1e-9)

    def test_closed_gate_recovers_propagation(self):
        self.params.gate_a.data = np.asarray(-30.0)
        self.params.gate_b.data = np.asarray(-30.0)
        rel_f, ent_f = self.blend()
        np.testing.assert_allclose(rel_f.data, self.rel_cmp.data, atol=1e-9)
        np.testing.assert_allclose(ent_f.data, self.ent_cmp.data, atol=1e-9)

    def test_zero_gate_is_even_average(self):
        rel_f, ent_f = self.blend()
        np.testing.assert_allclose(
            rel_f.data, 0.5 * self.text_rel.data + 0.5 * self.rel_cmp.data,
            atol=1e-12)
        np.testing.assert_allclose(
            ent_f.data, 0.5 * self.text_ent.data + 0.5 * self.ent_cmp.data,
            atol=1e-12)

    def test_gates_are_independent(self):
        self.params.gate_a.data = np.asarray(30.0)
        self.params.gate_b.data = np.asarray(-30.0)
        rel_f, ent_f = self.blend()
        np.testing.assert_allclose(rel_f.data, self.text_rel.data, atol=1e-9)
        np.testing.assert_allclose(ent_f.data, self.ent_cmp.data, atol=1e-9)


class TestDecoder:
    def test_identity_projections_give_scaled_dot_products(self):
        params = make_params(dim=3)
        params.w_query.data = np.eye(3)
        params.w_key.data = np.eye(3)
        q = np.array([1.0, 2.0, -1.0])
        cands = np.array([[1.0, 2.0, -1.0], [0.0, 0.0, 0.0], [1.0, 0.0, 1.0]])
        logits = decode_scores(params, Tensor(q), Tensor(cands))
        np.testing.assert_allclose(logits.data, cands @ q / np.sqrt(3.0),
                                   atol=1e-12)
        np.testing.assert_allclose(logits.data[0], 6.0 / np.sqrt(3.0),
                                   atol=1e-12)

    def test_batched_matches_per_query(self):
        params = make_params(dim=3, seed=9)
        rng = np.random.default_rng(10)
        queries = rng.normal(size=(4, 3))
        cands = rng.normal(size=(4, 6, 3))
        batched = decode_scores(params, Tensor(queries), Tensor(cands))
        assert batched.shape == (4, 6)
        for b in range(4):
            single = decode_scores(params, Tensor(queries[b]), Tensor(cands[b]))
            np.testing.assert_allclose(batched.data[b], single.data, atol=1e-12)

    def test_mlp_mode_ignores_query_row(self):
        params = make_params(mode="mlp")
        cands = Tensor(np.random.default_rng(11).normal(size=(5, 3)))
        a = decode_scores(params, Tensor(np.zeros(3)), cands)
        b = decode_scores(params, Tensor(np.ones(3)), cands)
        assert a.shape == (5,)
        np.testing.assert_array_equal(a.data, b.data)

    def test_unknown_mode_rejected(self):
        params = make_params()
        with pytest.raises(ValueError):
            decode_scores(params, Tensor(np.zeros(3)), Tensor(np.zeros((2, 3))),
                          mode="bilinear")
        with pytest.raises(ValueError):
            FusionParams(np.random.default_rng(0), 3, 4, decoder_mode="oops")

    def test_zero_query_tokens_rejected(self):
        with pytest.raises(ValueError):
            FusionParams(np.random.default_rng(0), 3, 4, n_query_tokens=0)


class TestGradients:
    def test_full_chain_matches_finite_differences(self):
        params = make_params(dim=3, text_dim=4, k=2, seed=12)
        groups = [params.fusion_group(), params.dtaf_group(),
                  params.decoder_group()]
        rng = np.random.default_rng(13)
        rel_tokens = [rng.normal(size=(n, 4)) for n in (2, 1)]
        ent_tokens = [rng.normal(size=(n, 4)) for n in (1, 3, 0, 2)]
        rel_q = rng.normal(size=(2, 3))
        rel_g = rng.normal(size=(2, 3))
        ent_q = rng.normal(size=(4, 3))
        ent_g = rng.normal(size=(4, 3))

        def loss_fn():
            text_rel = dtaf_pool_all(params, rel_tokens)
            text_ent = dtaf_pool_all(params, ent_tokens)
            rel, ent = fuse_channels(params, Tensor(rel_q), Tensor(rel_g),
                                     Tensor(ent_q), Tensor(ent_g))
            rel_f, ent_f = dtaf_fuse(params, text_rel, text_ent, rel, ent)
            query = reshape(gather(rel_f, np.array([1])), (3,))
            logits = decode_scores(params, query, ent_f)
            return tsum(logits * logits) + tsum(rel_f * rel_f)

        report = check_gradients(loss_fn, groups, max_coords=5, seed=3)
        assert max(report.values()) <= 1e-4

    def test_mlp_decoder_gradients(self):
        params = make_params(dim=3, text_dim=4, seed=14, mode="mlp")
        rng = np.random.default_rng(15)
        cands = rng.normal(size=(5, 3))

        def loss_fn():
            logits = decode_scores(params, Tensor(np.zeros(3)), Tensor(cands))
            return tsum(logits * logits)

        report = check_gradients(loss_fn, [params.decoder_group()],
                                 max_coords=8, seed=4)
        assert max(report.values()) <= 1e-4
