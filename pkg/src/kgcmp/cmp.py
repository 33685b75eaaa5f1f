"""Conditional message passing over an arbitrary edge list.

One layer: the message along edge (u, r, v) is score * (h_u ⊙ feat_r),
incoming messages are summed per node, and the node update is
LayerNorm(Linear([h_v || agg_v])).  Node states may carry a leading batch
axis, in which case every query in the batch is propagated in one pass.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import (
    ParamGroup, Parameter, ShapeError, Tensor, concat, gather, layer_norm,
    matmul, relu, scatter_sum,
)
from .optim import init_linear


@dataclass
class EdgeScores:
    """One relevance weight per edge, each in [0, 1]."""
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 1:
            raise ShapeError(f"edge scores must be 1-d, got {self.values.shape}")
        if self.values.size and (self.values.min() < 0.0 or self.values.max() > 1.0):
            raise ValueError("edge scores must lie in [0, 1]")


class CmpLayer:
    def __init__(self, rng: np.random.Generator, dim: int, name: str):
        self.weight = init_linear(rng, 2 * dim, dim, f"{name}.weight")
        self.bias = Parameter(np.zeros(dim), name=f"{name}.bias")
        self.ln_scale = Parameter(np.ones(dim), name=f"{name}.ln_scale")
        self.ln_shift = Parameter(np.zeros(dim), name=f"{name}.ln_shift")

    def params(self) -> list[Parameter]:
        return [self.weight, self.bias, self.ln_scale, self.ln_shift]


class CmpStack:
    """A fixed-depth stack of CMP layers sharing one dimension.

    `test_mode` replaces every update with the raw aggregation (no linear,
    no normalization) so unit examples have closed forms.
    """

    def __init__(self, rng: np.random.Generator | None, dim: int, layers: int,
                 name: str = "cmp", use_relu: bool = False, test_mode: bool = False):
        self.dim = dim
        self.use_relu = use_relu
        self.test_mode = test_mode
        if test_mode:
            self.layers: list[CmpLayer] = [None] * layers  # type: ignore[list-item]
        else:
            if rng is None:
                raise ValueError("an rng is required outside test mode")
            self.layers = [CmpLayer(rng, dim, f"{name}.layer{i}") for i in range(layers)]

    def params(self) -> list[Parameter]:
        if self.test_mode:
            return []
        out: list[Parameter] = []
        for layer in self.layers:
            out.extend(layer.params())
        return out

    def param_group(self, name: str) -> ParamGroup:
        return ParamGroup(name, self.params())


def _edge_score_tensor(scores, n_edges: int) -> Tensor | None:
    if scores is None:
        return None
    if isinstance(scores, EdgeScores):
        values = scores.values
    elif isinstance(scores, Tensor):
        return scores
    else:
        values = np.asarray(scores, dtype=np.float64)
    if values.shape != (n_edges,):
        raise ShapeError(f"edge scores shape {values.shape} != ({n_edges},)")
    return Tensor(values)


def cmp_forward(node_init: Tensor,
                edge_feats: Tensor,
                edges: tuple[np.ndarray, np.ndarray, np.ndarray],
                stack: CmpStack,
                scores: EdgeScores | Tensor | np.ndarray | None = None) -> Tensor:
    """Run `stack` over the edge list and return final node states.

    `node_init` is (V, d) or (B, V, d); `edge_feats` is (R, d) or (B, R, d).
    `edges` holds (source, relation, target) index arrays.  Zero layers
    return `node_init` unchanged.
    """
    src, rel, dst = edges
    n_nodes = node_init.shape[-2]
    n_rels = edge_feats.shape[-2]
    if node_init.shape[-1] != stack.dim or edge_feats.shape[-1] != stack.dim:
        raise ShapeError(
            f"dimension mismatch: nodes {node_init.shape}, edge feats "
            f"{edge_feats.shape}, stack dim {stack.dim}")
    if edge_feats.ndim > node_init.ndim:
        raise ShapeError("per-batch edge features need batched node states")
    for arr, bound, what in ((src, n_nodes, "source node"), (dst, n_nodes, "target node"),
                             (rel, n_rels, "relation")):
        if arr.size and (arr.min() < 0 or arr.max() >= bound):
            raise ShapeError(f"dangling {what} id in edge list (bound {bound})")

    score_t = _edge_score_tensor(scores, len(src))
    h = node_init
    node_axis = node_init.ndim - 2
    feat_axis = edge_feats.ndim - 2
    for layer in stack.layers:
        h_src = gather(h, src, axis=node_axis)
        r_feat = gather(edge_feats, rel, axis=feat_axis)
        msg = h_src * r_feat
        if score_t is not None:
            msg = msg * reshape_scores(score_t, msg.ndim)
        agg = scatter_sum(msg, dst, size=n_nodes, axis=node_axis)
        if stack.test_mode:
            h = agg
            continue
        z = matmul(concat([h, agg], axis=-1), layer.weight) + layer.bias
        h = layer_norm(z, layer.ln_scale, layer.ln_shift)
        if stack.use_relu:
            h = relu(h)
    return h


def reshape_scores(score_t: Tensor, msg_ndim: int) -> Tensor:
    """Broadcast a (E,) score vector against (.., E, d) messages."""
    from .autodiff import reshape
    target = (1,) * (msg_ndim - 2) + (score_t.shape[-1], 1)
    return reshape(score_t, target)
