"""Query-conditioned edge relevance from text features.

Each edge gets two bilinear logits (irrelevant, relevant) comparing its
concatenated head/relation/tail text features against the query's text
feature; the softmaxed relevant probability weights that edge's messages.
With zero features both logits vanish and every edge scores exactly 0.5.
"""
from __future__ import annotations

import numpy as np

from .autodiff import (
    ParamGroup, Parameter, ShapeError, Tensor, concat, gather, matmul,
    reshape, softmax, transpose,
)
from .graph import KnowledgeGraph


class EdgeScorerParams:
    """The (2, 3f, f) bilinear form over text features of width f."""

    def __init__(self, rng: np.random.Generator, feat_dim: int):
        self.feat_dim = feat_dim
        self.w = Parameter(rng.normal(scale=1.0 / np.sqrt(feat_dim),
                                      size=(2, 3 * feat_dim, feat_dim)),
                           name="edge_scorer.w")

    def param_group(self) -> ParamGroup:
        return ParamGroup("edge_scorer", [self.w])


def score_edges(params: EdgeScorerParams, edge_feats: Tensor | np.ndarray,
                query_feat: Tensor | np.ndarray) -> Tensor:
    """Relevance in (0, 1) for each row of (E, 3f) edge features."""
    if not isinstance(edge_feats, Tensor):
        edge_feats = Tensor(edge_feats)
    if not isinstance(query_feat, Tensor):
        query_feat = Tensor(query_feat)
    f = params.feat_dim
    if edge_feats.shape[-1] != 3 * f or query_feat.shape != (f,):
        raise ShapeError(
            f"edge feats {edge_feats.shape} / query {query_feat.shape} "
            f"do not fit feature width {f}")
    projected = matmul(params.w, reshape(query_feat, (1, f, 1)))  # (2, 3f, 1)
    logits = matmul(edge_feats, transpose(reshape(projected, (2, 3 * f))))
    probs = softmax(logits, axis=-1)
    relevant = gather(probs, np.array([1]), axis=-1)
    return reshape(relevant, relevant.shape[:-1])


def edge_text_features(kg: KnowledgeGraph, entity_text: np.ndarray,
                       relation_text: np.ndarray) -> np.ndarray:
    """Concatenated (h, r, t) text features for the forward triples only."""
    if not kg.is_augmented:
        raise ShapeError("edge features expect an inverse-augmented graph")
    heads, rels, tails = kg.edge_arrays()
    n_fwd = len(kg.triples) // 2
    heads, rels, tails = heads[:n_fwd], rels[:n_fwd], tails[:n_fwd]
    return np.concatenate(
        [entity_text[heads], relation_text[rels], entity_text[tails]], axis=-1)


def score_augmented_graph(params: EdgeScorerParams, kg: KnowledgeGraph,
                          entity_text: np.ndarray, relation_text: np.ndarray,
                          query_feat: Tensor | np.ndarray) -> Tensor:
    """Scores for every edge of an augmented graph, inverses inheriting.

    Augmentation appends the reversed triples after the forward ones in the
    same order, so the score vector is the forward scores repeated.
    """
    feats = edge_text_features(kg, entity_text, relation_text)
    fwd = score_edges(params, feats, query_feat)
    return concat([fwd, fwd], axis=0)
