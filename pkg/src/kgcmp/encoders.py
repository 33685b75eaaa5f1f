"""The two encoding channels.

Both run CMP twice: first over the relation graph (meta-relation edges,
producing per-relation features), then over the entity graph using those
features per edge.  The query-conditioned channel seeds the query relation
with an all-ones row and the query entity with that relation's encoding;
the global channel seeds every relation with ones and entities with their
projected text embeddings, so without edge scores its output is
query-independent and cacheable.
"""
from __future__ import annotations

import numpy as np

from .autodiff import ParamGroup, Parameter, ShapeError, Tensor, matmul
from .cmp import CmpStack, EdgeScores, cmp_forward
from .graph import KnowledgeGraph, RelationGraph
from .optim import init_linear

N_META = 4


class QcmpParams:
    """Meta-relation embeddings plus the two CMP stacks of the query channel."""

    def __init__(self, rng: np.random.Generator, dim: int,
                 relation_layers: int = 6, entity_layers: int = 6):
        self.dim = dim
        self.meta = Parameter(rng.normal(scale=1.0 / np.sqrt(dim), size=(N_META, dim)),
                              name="qcmp.meta")
        self.rel_stack = CmpStack(rng, dim, relation_layers, name="qcmp.rel")
        self.ent_stack = CmpStack(rng, dim, entity_layers, name="qcmp.ent")

    def param_group(self) -> ParamGroup:
        return ParamGroup("qcmp", [self.meta] + self.rel_stack.params() + self.ent_stack.params())


class GcmpParams:
    """Text-channel counterpart; includes the text-to-model projection."""

    def __init__(self, rng: np.random.Generator, dim: int, text_dim: int,
                 relation_layers: int = 3, entity_layers: int = 3):
        self.dim = dim
        self.text_dim = text_dim
        self.meta = Parameter(rng.normal(scale=1.0 / np.sqrt(dim), size=(N_META, dim)),
                              name="gcmp.meta")
        self.rel_stack = CmpStack(rng, dim, relation_layers, name="gcmp.rel")
        self.ent_stack = CmpStack(rng, dim, entity_layers, name="gcmp.ent")
        self.text_proj = init_linear(rng, text_dim, dim, "gcmp.text_proj")
        self.text_bias = Parameter(np.zeros(dim), name="gcmp.text_bias")

    def param_group(self) -> ParamGroup:
        params = [self.meta, self.text_proj, self.text_bias]
        params += self.rel_stack.params() + self.ent_stack.params()
        return ParamGroup("gcmp", params)


def qcmp_relation_init(query_relation: int, n_relations: int, dim: int) -> np.ndarray:
    """All-ones row for the query relation, zeros elsewhere."""
    if not 0 <= query_relation < n_relations:
        raise ShapeError(f"query relation {query_relation} out of range {n_relations}")
    out = np.zeros((n_relations, dim))
    out[query_relation] = 1.0
    return out


def qcmp_encode(queries: list[tuple[int, int]],
                kg: KnowledgeGraph,
                rel_graph: RelationGraph,
                params: QcmpParams,
                scores: EdgeScores | np.ndarray | None = None) -> tuple[Tensor, Tensor]:
    """Encode a batch of (entity, relation) queries in one propagation.

    Returns (R_q, H_q) with shapes (B, |R|, d) and (B, |E|, d).
    """
    n_rels, n_ents, d = kg.num_relations, kg.num_entities, params.dim
    if rel_graph.num_relations != n_rels:
        raise ShapeError("relation graph does not match the entity graph")
    rel_init = np.zeros((len(queries), n_rels, d))
    ent_pick = np.zeros((len(queries), n_ents, 1))
    rel_pick = np.zeros((len(queries), 1, n_rels))
    for b, (e_q, r_q) in enumerate(queries):
        rel_init[b] = qcmp_relation_init(r_q, n_rels, d)
        if not 0 <= e_q < n_ents:
            raise ShapeError(f"query entity {e_q} out of range {n_ents}")
        ent_pick[b, e_q, 0] = 1.0
        rel_pick[b, 0, r_q] = 1.0

    r_q_states = cmp_forward(Tensor(rel_init), params.meta,
                             rel_graph.edge_arrays(), params.rel_stack)
    # Entity init: row e_q receives R_q[r_q]; built with one-hot products so
    # the query row stays on the differentiation path.
    query_rows = matmul(Tensor(rel_pick), r_q_states)          # (B, 1, d)
    ent_init = matmul(Tensor(ent_pick), query_rows)            # (B, |E|, d)
    h_q = cmp_forward(ent_init, r_q_states, kg.edge_arrays(),
                      params.ent_stack, scores=scores)
    return r_q_states, h_q


def gcmp_encode(kg: KnowledgeGraph,
                rel_graph: RelationGraph,
                entity_text: np.ndarray,
                params: GcmpParams,
                scores: EdgeScores | np.ndarray | None = None) -> tuple[Tensor, Tensor]:
    """Encode the graph once from text.

    `entity_text` is the (|E|, text_dim) matrix of per-entity text features.
    `scores` weights the entity-pass messages per edge; with None every edge
    passes at full weight and the output is query-independent.
    Returns (R_g, H_g) with shapes (|R|, d) and (|E|, d).
    """
    if entity_text.shape != (kg.num_entities, params.text_dim):
        raise ShapeError(
            f"text matrix {entity_text.shape} vs expected "
            f"({kg.num_entities}, {params.text_dim})")
    if rel_graph.num_relations != kg.num_relations:
        raise ShapeError("relation graph does not match the entity graph")
    rel_init = Tensor(np.ones((kg.num_relations, params.dim)))
    r_g = cmp_forward(rel_init, params.meta, rel_graph.edge_arrays(), params.rel_stack)
    ent_init = matmul(Tensor(entity_text), params.text_proj) + params.text_bias
    h_g = cmp_forward(ent_init, r_g, kg.edge_arrays(), params.ent_stack,
                      scores=scores)
    return r_g, h_g


class GcmpCache:
    """Per-graph memo of the global channel for inference.

    Training must bypass this cache: entries hold values from the parameters
    current at fill time and never join a gradient graph.
    """

    def __init__(self):
        self._store: dict[int, tuple[np.ndarray, np.ndarray]] = {}

    def get_or_compute(self, kg: KnowledgeGraph, rel_graph: RelationGraph,
                       entity_text: np.ndarray, params: GcmpParams,
                       scores: EdgeScores | np.ndarray | None = None) -> tuple[Tensor, Tensor]:
        if scores is not None:
            # Score-modulated encodings vary per query; memoizing them
            # would serve one query's weights to another.
            return gcmp_encode(kg, rel_graph, entity_text, params, scores)
        key = id(kg)
        if key not in self._store:
            r_g, h_g = gcmp_encode(kg, rel_graph, entity_text, params)
            self._store[key] = (r_g.data, h_g.data)
        r_data, h_data = self._store[key]
        return Tensor(r_data), Tensor(h_data)

    def invalidate(self) -> None:
        self._store.clear()
