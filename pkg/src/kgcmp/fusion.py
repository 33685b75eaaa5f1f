"""Channel fusion, text-adaptive blending, and candidate scoring.

The two channel outputs are merged row-wise by a small MLP.  Pooled text
features then re-enter through a gated convex blend whose gates are scalar
sigmoids, so either modality can be recovered exactly at the gate limits.
Scoring compares the query row against candidate rows, by default with a
scaled dot product through learned query/key projections.
"""
from __future__ import annotations

import numpy as np

from .autodiff import (
    ParamGroup, Parameter, ShapeError, Tensor, concat, gather, matmul, relu,
    reshape, sigmoid, softmax, tmean, transpose,
)
from .optim import init_bias, init_linear


class FusionParams:
    """Fusion MLPs, text-pooling attention, blend gates, and the decoder."""

    def __init__(self, rng: np.random.Generator, dim: int, text_dim: int,
                 n_query_tokens: int = 1, decoder_mode: str = "attention"):
        if n_query_tokens < 1:
            raise ValueError("need at least one pooling query token")
        if decoder_mode not in ("attention", "mlp"):
            raise ValueError(f"unknown decoder mode {decoder_mode!r}")
        self.dim = dim
        self.text_dim = text_dim
        self.n_query_tokens = n_query_tokens
        self.decoder_mode = decoder_mode

        self.rel_w1 = init_linear(rng, 2 * dim, dim, "fusion.rel_w1")
        self.rel_b1 = init_bias(dim, "fusion.rel_b1")
        self.rel_w2 = init_linear(rng, dim, dim, "fusion.rel_w2")
        self.rel_b2 = init_bias(dim, "fusion.rel_b2")
        self.ent_w1 = init_linear(rng, 2 * dim, dim, "fusion.ent_w1")
        self.ent_b1 = init_bias(dim, "fusion.ent_b1")
        self.ent_w2 = init_linear(rng, dim, dim, "fusion.ent_w2")
        self.ent_b2 = init_bias(dim, "fusion.ent_b2")

        self.q_token = Parameter(rng.normal(scale=1.0 / np.sqrt(dim),
                                            size=(n_query_tokens, dim)),
                                 name="dtaf.q_token")
        self.text_kv = init_linear(rng, text_dim, dim, "dtaf.text_kv")
        self.text_kv_bias = init_bias(dim, "dtaf.text_kv_bias")
        self.gate_a = Parameter(np.zeros(()), name="dtaf.gate_a")
        self.gate_b = Parameter(np.zeros(()), name="dtaf.gate_b")

        self.w_query = init_linear(rng, dim, dim, "decoder.w_query")
        self.w_key = init_linear(rng, dim, dim, "decoder.w_key")
        self.mlp_w1 = init_linear(rng, dim, dim, "decoder.mlp_w1")
        self.mlp_b1 = init_bias(dim, "decoder.mlp_b1")
        self.mlp_w2 = init_linear(rng, dim, 1, "decoder.mlp_w2")
        self.mlp_b2 = init_bias(1, "decoder.mlp_b2")

    def fusion_group(self) -> ParamGroup:
        return ParamGroup("fusion", [
            self.rel_w1, self.rel_b1, self.rel_w2, self.rel_b2,
            self.ent_w1, self.ent_b1, self.ent_w2, self.ent_b2])

    def dtaf_group(self) -> ParamGroup:
        return ParamGroup("dtaf", [
            self.q_token, self.text_kv, self.text_kv_bias,
            self.gate_a, self.gate_b])

    def decoder_group(self) -> ParamGroup:
        return ParamGroup("decoder", [
            self.w_query, self.w_key,
            self.mlp_w1, self.mlp_b1, self.mlp_w2, self.mlp_b2])


def _mlp(x: Tensor, w1, b1, w2, b2) -> Tensor:
    return matmul(relu(matmul(x, w1) + b1), w2) + b2


def fuse_channels(params: FusionParams,
                  rel_q: Tensor, rel_g: Tensor,
                  ent_q: Tensor, ent_g: Tensor) -> tuple[Tensor, Tensor]:
    """Row-wise MLP over the concatenated channel outputs."""
    if rel_q.shape[-1] != rel_g.shape[-1] or ent_q.shape[-1] != ent_g.shape[-1]:
        raise ShapeError("channel dimensions differ")
    rel = _mlp(concat([rel_q, rel_g], axis=-1),
               params.rel_w1, params.rel_b1, params.rel_w2, params.rel_b2)
    ent = _mlp(concat([ent_q, ent_g], axis=-1),
               params.ent_w1, params.ent_b1, params.ent_w2, params.ent_b2)
    return rel, ent


def dtaf_pool(params: FusionParams, token_matrix: np.ndarray) -> Tensor:
    """Cross-attention pooling of one token sequence into a d-vector.

    The learnable query tokens attend over projected token features; the
    pooled rows are averaged into a single vector.  An empty sequence pools
    to zeros (the provider-level fallback).
    """
    token_matrix = np.asarray(token_matrix, dtype=np.float64)
    if token_matrix.size == 0:
        return Tensor(np.zeros(params.dim))
    pooled = dtaf_pool_grouped(params, token_matrix.reshape((1,) + token_matrix.shape))
    return reshape(pooled, (params.dim,))


def dtaf_pool_grouped(params: FusionParams, token_block: np.ndarray) -> Tensor:
    """Pool a (G, T, text_dim) block of equal-length sequences to (G, d)."""
    kv = matmul(Tensor(token_block), params.text_kv) + params.text_kv_bias
    att = softmax(matmul(params.q_token, transpose(kv)) * (1.0 / np.sqrt(params.dim)))
    pooled = matmul(att, kv)                    # (G, k, d)
    return tmean(pooled, axis=-2)               # (G, d)


def dtaf_pool_all(params: FusionParams, token_matrices: list[np.ndarray]) -> Tensor:
    """Pool many variable-length sequences, grouped by length for batching.

    Returns an (N, d) tensor aligned with the input order.
    """
    n = len(token_matrices)
    by_len: dict[int, list[int]] = {}
    for i, mat in enumerate(token_matrices):
        by_len.setdefault(int(mat.shape[0]), []).append(i)
    pieces: list[tuple[int, Tensor]] = []
    for length, idxs in sorted(by_len.items()):
        if length == 0:
            for i in idxs:
                pieces.append((i, Tensor(np.zeros((1, params.dim)))))
            continue
        block = np.stack([token_matrices[i] for i in idxs])
        pooled = dtaf_pool_grouped(params, block)
        for j, i in enumerate(idxs):
            pieces.append((i, reshape(gather_row(pooled, j), (1, params.dim))))
    pieces.sort(key=lambda p: p[0])
    assert len(pieces) == n
    return concat([t for _, t in pieces], axis=0)


def gather_row(t: Tensor, row: int) -> Tensor:
    return gather(t, np.array([row]), axis=0)


def dtaf_fuse(params: FusionParams,
              text_rel: Tensor, text_ent: Tensor,
              rel_cmp: Tensor, ent_cmp: Tensor) -> tuple[Tensor, Tensor]:
    """Gated convex blend of pooled text with the fused channel outputs."""
    alpha = sigmoid(params.gate_a)
    beta = sigmoid(params.gate_b)
    one = Tensor(1.0)
    rel_f = alpha * text_rel + (one - alpha) * rel_cmp
    ent_f = beta * text_ent + (one - beta) * ent_cmp
    return rel_f, ent_f


def decode_scores(params: FusionParams, query_row: Tensor,
                  candidate_rows: Tensor, mode: str | None = None) -> Tensor:
    """Per-candidate logits for one query (or a batch).

    attention mode: (W_q q) . (W_k h_i) / sqrt(d).
    mlp mode: a per-candidate MLP on h_i alone; the query conditioning is
    already baked into the candidate states.
    """
    mode = mode or params.decoder_mode
    d = params.dim
    if mode == "attention":
        q = matmul(reshape(query_row, query_row.shape[:-1] + (1, d)), params.w_query)
        k = matmul(candidate_rows, params.w_key)
        logits = matmul(q, transpose(k)) * (1.0 / np.sqrt(d))
        return reshape(logits, logits.shape[:-2] + (candidate_rows.shape[-2],))
    if mode == "mlp":
        out = _mlp(candidate_rows, params.mlp_w1, params.mlp_b1,
                   params.mlp_w2, params.mlp_b2)
        return reshape(out, out.shape[:-1])
    raise ValueError(f"unknown decoder mode {mode!r}")
