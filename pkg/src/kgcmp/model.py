"""Model assembly: both channels, fusion, blending, and candidate scoring.

A `GraphContext` packages one inverse-augmented graph together with every
query-independent precomputation (relation lifting, text features, known
tails).  `score_queries` then turns a batch of (entity, relation) queries
into one logit per candidate entity.
"""
from __future__ import annotations

import numpy as np

from .autodiff import ParamGroup, Parameter, ShapeError, Tensor, broadcast_to, matmul, reshape
from .edge_scoring import EdgeScorerParams, score_augmented_graph
from .encoders import GcmpCache, GcmpParams, QcmpParams, gcmp_encode, qcmp_encode
from .fusion import FusionParams, decode_scores, dtaf_fuse, dtaf_pool_all, fuse_channels
from .graph import KnowledgeGraph, augment_inverses, lift_relation_graph
from .text import TextProvider


class GraphContext:
    """An augmented graph plus cached text features and tail indexes.

    `unscored_relations` names relations whose edges always pass at full
    weight; relevance modulation then applies only to the remaining edges.
    Structural wiring added around a graph is not a factual claim, so it has
    nothing for a relevance estimate to doubt.
    """

    def __init__(self, kg: KnowledgeGraph, provider: TextProvider,
                 include_self_loops: bool = True,
                 unscored_relations: tuple[str, ...] = ()):
        self.kg = kg if kg.is_augmented else augment_inverses(kg)
        self.rel_graph = lift_relation_graph(self.kg, include_self_loops)
        self.provider = provider
        self.scored_edge_mask: np.ndarray | None = None
        if unscored_relations:
            skip = set()
            for name in unscored_relations:
                rid = self.kg.relation_id(name)
                skip.add(rid)
                skip.add(self.kg.inverse_of[rid])
            _, rels, _ = self.kg.edge_arrays()
            self.scored_edge_mask = np.array(
                [0.0 if r in skip else 1.0 for r in rels])
        self.entity_text = np.stack([
            provider.vector(name, self.kg.entity_desc.get(i))
            for i, name in enumerate(self.kg.entity_names)])
        self.relation_text = np.stack([
            provider.vector(name, self.kg.relation_desc.get(i))
            for i, name in enumerate(self.kg.relation_names)])
        self.entity_tokens = [
            provider.tokens(name, self.kg.entity_desc.get(i))
            for i, name in enumerate(self.kg.entity_names)]
        self.relation_tokens = [
            provider.tokens(name, self.kg.relation_desc.get(i))
            for i, name in enumerate(self.kg.relation_names)]
        self.known_tails: dict[tuple[int, int], set[int]] = {}
        for h, r, t in self.kg.triples:
            self.known_tails.setdefault((h, r), set()).add(t)

    @property
    def num_entities(self) -> int:
        return self.kg.num_entities

    @property
    def num_relations(self) -> int:
        return self.kg.num_relations


class Model:
    """All trainable pieces plus the ablation switches."""

    GROUP_NAMES = ("qcmp", "gcmp", "fusion", "dtaf", "decoder", "edge_scorer")

    def __init__(self, rng: np.random.Generator, dim: int, text_dim: int,
                 qcmp_rel_layers: int = 6, qcmp_ent_layers: int = 6,
                 gcmp_rel_layers: int = 3, gcmp_ent_layers: int = 3,
                 n_query_tokens: int = 1, decoder_mode: str = "attention",
                 use_dtaf: bool = True, use_edge_scores: bool = True):
        self.dim = dim
        self.text_dim = text_dim
        self.use_dtaf = use_dtaf
        self.use_edge_scores = use_edge_scores
        self.qcmp = QcmpParams(rng, dim, qcmp_rel_layers, qcmp_ent_layers)
        self.gcmp = GcmpParams(rng, dim, text_dim, gcmp_rel_layers, gcmp_ent_layers)
        self.fusion = FusionParams(rng, dim, text_dim, n_query_tokens, decoder_mode)
        self.edge_scorer = EdgeScorerParams(rng, text_dim)
        self._groups = {
            "qcmp": self.qcmp.param_group(),
            "gcmp": self.gcmp.param_group(),
            "fusion": self.fusion.fusion_group(),
            "dtaf": self.fusion.dtaf_group(),
            "decoder": self.fusion.decoder_group(),
            "edge_scorer": self.edge_scorer.param_group(),
        }

    def hyperparams(self) -> dict:
        return {
            "dim": self.dim,
            "text_dim": self.text_dim,
            "qcmp_rel_layers": len(self.qcmp.rel_stack.layers),
            "qcmp_ent_layers": len(self.qcmp.ent_stack.layers),
            "gcmp_rel_layers": len(self.gcmp.rel_stack.layers),
            "gcmp_ent_layers": len(self.gcmp.ent_stack.layers),
            "n_query_tokens": self.fusion.n_query_tokens,
            "decoder_mode": self.fusion.decoder_mode,
            "use_dtaf": self.use_dtaf,
            "use_edge_scores": self.use_edge_scores,
        }

    @classmethod
    def from_hyperparams(cls, rng: np.random.Generator, hp: dict) -> "Model":
        return cls(rng, **hp)

    def param_groups(self) -> list[ParamGroup]:
        return list(self._groups.values())

    def group(self, name: str) -> ParamGroup:
        return self._groups[name]

    def set_frozen(self, names: list[str], frozen: bool) -> None:
        for name in names:
            self._groups[name].frozen = frozen

    def named_parameters(self) -> dict[str, Parameter]:
        out: dict[str, Parameter] = {}
        for group in self._groups.values():
            for p in group:
                if p.name in out:
                    raise ValueError(f"duplicate parameter name {p.name!r}")
                out[p.name] = p
        return out


class EvalCache:
    """Query-independent intermediates, reusable only at inference.

    Values are snapshots of the parameters at fill time; training code must
    not read from here.
    """

    def __init__(self):
        self.gcmp = GcmpCache()
        self._pooled: dict[int, tuple[np.ndarray, np.ndarray]] = {}

    def pooled_text(self, ctx: GraphContext, fusion: FusionParams):
        key = id(ctx)
        if key not in self._pooled:
            rel = dtaf_pool_all(fusion, ctx.relation_tokens)
            ent = dtaf_pool_all(fusion, ctx.entity_tokens)
            self._pooled[key] = (rel.data, ent.data)
        rel_data, ent_data = self._pooled[key]
        return Tensor(rel_data), Tensor(ent_data)

    def invalidate(self) -> None:
        self.gcmp.invalidate()
        self._pooled.clear()


def query_entity_rows(ent_f: Tensor, queries: list[tuple[int, int]]) -> Tensor:
    """Pick each query node's row from (B, |E|, d) fused states.

    The relation half of the query conditioned the whole propagation via the
    init; decoding compares the query node against every candidate.
    """
    n_ents = ent_f.shape[-2]
    pick = np.zeros((len(queries), 1, n_ents))
    for b, (e_q, _) in enumerate(queries):
        pick[b, 0, e_q] = 1.0
    rows = matmul(Tensor(pick), ent_f)
    return reshape(rows, (len(queries), ent_f.shape[-1]))


def score_queries(model: Model, ctx: GraphContext,
                  queries: list[tuple[int, int]],
                  question_vec: np.ndarray | None = None,
                  cache: EvalCache | None = None) -> Tensor:
    """Logits over every candidate entity for each query, shape (B, |E|).

    `question_vec` is the query-level text feature that drives edge
    relevance; without it (or with the ablation off) every edge passes at
    full weight.  `cache` skips the query-independent recomputation and is
    only safe when no gradients are needed.
    """
    if not queries:
        raise ShapeError("empty query batch")
    batch = len(queries)

    scores = None
    if model.use_edge_scores and question_vec is not None and ctx.kg.triples:
        scores = score_augmented_graph(model.edge_scorer, ctx.kg,
                                       ctx.entity_text, ctx.relation_text,
                                       question_vec)
        if ctx.scored_edge_mask is not None:
            keep = ctx.scored_edge_mask
            scores = scores * Tensor(keep) + Tensor(1.0 - keep)

    rel_q, ent_q = qcmp_encode(queries, ctx.kg, ctx.rel_graph, model.qcmp,
                               scores=scores)
    if cache is not None:
        rel_g, ent_g = cache.gcmp.get_or_compute(ctx.kg, ctx.rel_graph,
                                                 ctx.entity_text, model.gcmp,
                                                 scores=scores)
    else:
        rel_g, ent_g = gcmp_encode(ctx.kg, ctx.rel_graph, ctx.entity_text,
                                   model.gcmp, scores=scores)

    rel_g_b = broadcast_to(rel_g, (batch,) + rel_g.shape)
    ent_g_b = broadcast_to(ent_g, (batch,) + ent_g.shape)
    rel, ent = fuse_channels(model.fusion, rel_q, rel_g_b, ent_q, ent_g_b)

    if model.use_dtaf:
        if cache is not None:
            text_rel, text_ent = cache.pooled_text(ctx, model.fusion)
        else:
            text_rel = dtaf_pool_all(model.fusion, ctx.relation_tokens)
            text_ent = dtaf_pool_all(model.fusion, ctx.entity_tokens)
        rel, ent = dtaf_fuse(model.fusion, text_rel, text_ent, rel, ent)

    query_rows = query_entity_rows(ent, queries)
    return decode_scores(model.fusion, query_rows, ent)
