"""Filtered ranking over all candidate entities: MRR and Hits@10.

Both query directions are evaluated, the reverse one through the inverse
relation.  Known true tails other than the gold answer are removed before
ranking, and ties around the gold score resolve to the middle rank so
results do not depend on sort stability.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from .graph import DataError, InductiveSplit, KnowledgeGraph
from .model import EvalCache, GraphContext, Model, score_queries

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class RankResult:
    rank: int
    candidates: int

    def __post_init__(self):
        if not 1 <= self.rank <= self.candidates:
            raise ValueError(f"rank {self.rank} outside 1..{self.candidates}")


def rank_query(scores: np.ndarray, gold: int, filter_out=()) -> RankResult:
    """Filtered 1-based rank of `gold` among the surviving candidates."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 1:
        raise DataError(f"score vector must be 1-d, got {scores.shape}")
    if not 0 <= gold < scores.size:
        raise DataError(f"gold id {gold} missing from {scores.size} scores")
    filter_idx = np.asarray(sorted(set(filter_out)), dtype=np.int64)
    if filter_idx.size and gold in set(filter_idx.tolist()):
        raise DataError("gold answer present in the filter set")
    mask = np.ones(scores.size, dtype=bool)
    if filter_idx.size:
        mask[filter_idx] = False
    gold_score = scores[gold]
    survivors = scores[mask]
    greater = int(np.count_nonzero(survivors > gold_score))
    ties = int(np.count_nonzero(survivors == gold_score)) - 1
    return RankResult(1 + greater + ties // 2, int(mask.sum()))


def mrr(ranks) -> float:
    ranks = list(ranks)
    if not ranks:
        raise DataError("no ranks to average")
    return float(sum(1.0 / r for r in ranks) / len(ranks))


def hits_at(ranks, k: int = 10) -> float:
    ranks = list(ranks)
    if not ranks:
        raise DataError("no ranks to average")
    return float(sum(1 for r in ranks if r <= k) / len(ranks))


def random_baseline(n_candidates: int) -> float:
    """Expected MRR of uniform random scoring: H_n / n."""
    if n_candidates < 1:
        raise DataError("need at least one candidate")
    harmonic = sum(1.0 / i for i in range(1, n_candidates + 1))
    return harmonic / n_candidates


@dataclass
class EvalResult:
    mrr: float
    hits10: float
    n_queries: int
    direction_breakdown: dict[str, dict[str, float]]
    per_query: list[dict] = field(default_factory=list)
    skipped: int = 0

    def to_json_dict(self) -> dict:
        return {
            "mrr": self.mrr,
            "hits10": self.hits10,
            "n_queries": self.n_queries,
            "direction_breakdown": self.direction_breakdown,
            "skipped": self.skipped,
        }

    def write_csv(self, path: str) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=[
                "direction", "head", "relation", "gold", "rank", "candidates"])
            writer.writeheader()
            writer.writerows(self.per_query)


def _known_tails_with(ctx: GraphContext, extra_name_triples) -> dict:
    known = {key: set(vals) for key, vals in ctx.known_tails.items()}
    kg = ctx.kg
    ent = {name: i for i, name in enumerate(kg.entity_names)}
    rel = {name: i for i, name in enumerate(kg.relation_names)}
    for h, r, t in extra_name_triples or ():
        if h not in ent or r not in rel or t not in ent:
            continue
        hid, rid, tid = ent[h], rel[r], ent[t]
        known.setdefault((hid, rid), set()).add(tid)
        inv = kg.inverse_of[rid]
        known.setdefault((tid, inv), set()).add(hid)
    return known


def evaluate_graph(model: Model, ctx: GraphContext,
                   eval_triples: list[tuple[int, int, int]],
                   extra_filter_triples=None,
                   batch_size: int = 16,
                   keep_per_query: bool = False) -> EvalResult:
    """Rank every eval triple in both directions on one graph.

    `eval_triples` are id triples over `ctx`'s graph using forward relation
    ids; `extra_filter_triples` are name triples whose translations extend
    the filter sets (the train/valid/test union).
    """
    if not eval_triples:
        raise DataError("no evaluation triples")
    known = _known_tails_with(ctx, extra_filter_triples)
    kg = ctx.kg
    jobs = []
    for h, r, t in eval_triples:
        inv = kg.inverse_of[r]
        jobs.append(("tail", (h, r), t))
        jobs.append(("head", (t, inv), h))

    cache = EvalCache()
    ranks: dict[str, list[int]] = {"tail": [], "head": []}
    per_query: list[dict] = []
    for start in range(0, len(jobs), batch_size):
        chunk = jobs[start:start + batch_size]
        logits = score_queries(model, ctx, [q for _, q, _ in chunk],
                               cache=cache).data
        for row, (direction, (src, rel), gold) in zip(logits, chunk):
            filt = known.get((src, rel), set()) - {gold}
            result = rank_query(row, gold, filt)
            ranks[direction].append(result.rank)
            if keep_per_query:
                per_query.append({
                    "direction": direction,
                    "head": kg.entity_names[src],
                    "relation": kg.relation_names[rel],
                    "gold": kg.entity_names[gold],
                    "rank": result.rank,
                    "candidates": result.candidates,
                })

    all_ranks = ranks["tail"] + ranks["head"]
    breakdown = {
        d: {"mrr": mrr(rs), "hits10": hits_at(rs)}
        for d, rs in ranks.items() if rs
    }
    return EvalResult(mrr=mrr(all_ranks), hits10=hits_at(all_ranks),
                      n_queries=len(all_ranks),
                      direction_breakdown=breakdown, per_query=per_query)


def map_name_triples(kg: KnowledgeGraph, name_triples) -> tuple[list, int]:
    """Translate name triples to ids, dropping those outside the graph."""
    ent = {name: i for i, name in enumerate(kg.entity_names)}
    rel = {name: i for i, name in enumerate(kg.relation_names)}
    mapped, skipped = [], 0
    for h, r, t in name_triples:
        if h in ent and r in rel and t in ent:
            mapped.append((ent[h], rel[r], ent[t]))
        else:
            skipped += 1
    if skipped:
        log.warning("skipped %d eval triples absent from the graph", skipped)
    return mapped, skipped


def evaluate_split(model: Model, split: InductiveSplit, provider,
                   which: str = "test", batch_size: int = 16,
                   keep_per_query: bool = False,
                   include_self_loops: bool = True) -> EvalResult:
    """Evaluate on a loaded split: `which` picks the triple set and graph."""
    if which == "test":
        graph, triples = split.test_graph, split.test_triples
    elif which == "valid":
        graph, triples = split.valid_graph, split.valid_triples
    elif which == "train":
        graph = split.train_graph
        triples = tuple(
            (graph.entity_names[h], graph.relation_names[r], graph.entity_names[t])
            for h, r, t in graph.triples)
    else:
        raise DataError(f"unknown evaluation target {which!r}")
    ctx = GraphContext(graph, provider, include_self_loops)
    mapped, skipped = map_name_triples(ctx.kg, triples)
    if not mapped:
        raise DataError("no evaluation triples map onto the graph")
    extra = (tuple(split.valid_triples) + tuple(split.test_triples))
    result = evaluate_graph(model, ctx, mapped, extra_filter_triples=extra,
                            batch_size=batch_size, keep_per_query=keep_per_query)
    result.skipped += skipped
    return result
