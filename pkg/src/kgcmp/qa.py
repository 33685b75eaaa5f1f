"""Question answering over a graph: augmentation, retrieval, fine-tuning.

A question becomes a fresh node wired to its topic entities; each option
becomes an answer node wired to the entities it mentions.  Solved examples
are embedded as disjoint replicas whose gold edge populates the otherwise
empty answer relation, and the query asks which answer node completes
(question, answer-relation, ?).
"""
from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field

import numpy as np

from .autodiff import backward
from .graph import DataError, KnowledgeGraph, load_kg
from .model import GraphContext, Model, score_queries
from .optim import Adam
from .synth import QaInstance, QaOption
from .text import TextProvider, top_k_similar
from .training import batch_bce

log = logging.getLogger(__name__)

REL_ASKS_ABOUT = "REL_asks_about"
REL_OPTION_OF = "REL_option_of"
REL_THE_ANSWER_IS = "REL_the_answer_is"
AUX_RELATIONS = (REL_ASKS_ABOUT, REL_OPTION_OF, REL_THE_ANSWER_IS)

QUESTION_NODE = "Q[question]"
QUESTION_ALIAS = "[question]"
ANSWER_ALIAS = "[answer]"

ASKS_ABOUT_DESC = "the question asks about this topic"
OPTION_OF_DESC = "the option mentions this entity"
ANSWER_IS_DESC = "the answer to the question is"


class AliasedProvider(TextProvider):
    """Remaps synthetic node names before text lookup.

    Replica nodes resolve to the entity they copy.  Wiring nodes (questions
    and answer options) get canonical ids, and their node-level vector comes
    from the provider's missing-text path, so every question shares one
    whole-node feature no matter its phrasing; question and option text
    reaches the model at token level only.
    """

    def __init__(self, base: TextProvider, alias: dict[str, str],
                 opaque: tuple[str, ...] = ()):
        self.base = base
        self.alias = alias
        self.opaque = frozenset(opaque)
        self.dim = base.dim

    def vector(self, entity_id: str, text: str | None) -> np.ndarray:
        target = self.alias.get(entity_id, entity_id)
        if target in self.opaque:
            return self.base.vector(target, None)
        return self.base.vector(target, text)

    def tokens(self, entity_id: str, text: str | None) -> np.ndarray:
        return self.base.tokens(self.alias.get(entity_id, entity_id), text)


def question_feature(provider: TextProvider, text: str) -> np.ndarray:
    """Mean token feature of a question; stable across shared phrasing."""
    return provider.tokens(QUESTION_ALIAS, text).mean(axis=0)


def query_feature(provider: TextProvider) -> np.ndarray:
    """Text feature of the answer query that drives edge scoring.

    Every question poses the same query shape (question, answer-relation, ?),
    so edge scores are conditioned on the relation's description, the part of
    the query that is stable across questions.  Trust learned for an edge on
    one question then carries unchanged to every other question; a feature of
    the question text would re-weight each edge per question and let the
    scorer absorb distinctions that belong to the token-matching channel.
    """
    return provider.tokens(REL_THE_ANSWER_IS, ANSWER_IS_DESC).mean(axis=0)


@dataclass
class QaGraph:
    ctx: GraphContext
    question_node: int
    answer_nodes: list[int]
    query_vec: np.ndarray
    answer_relation: int


def answer_node_name(label: str) -> str:
    return f"A[{label}]"


def build_qa_graph(instance: QaInstance, few_shot: list[QaInstance],
                   provider: TextProvider,
                   include_self_loops: bool = True) -> QaGraph:
    """Augment the instance's subgraph with question/answer structure."""
    kg = instance.kg
    if kg.is_augmented:
        raise DataError("expected an unaugmented subgraph")
    for name in AUX_RELATIONS:
        if name in kg.relation_names:
            raise DataError(f"subgraph already defines {name!r}")

    entity_names = list(kg.entity_names)
    entity_desc = {i: d for i, d in kg.entity_desc.items()}
    alias: dict[str, str] = {}
    ent_ids = {name: i for i, name in enumerate(entity_names)}

    def add_node(name: str, desc: str | None, alias_to: str | None) -> int:
        if name in ent_ids:
            raise DataError(f"node name collision: {name!r}")
        idx = len(entity_names)
        entity_names.append(name)
        ent_ids[name] = idx
        if desc is not None:
            entity_desc[idx] = desc
        if alias_to is not None:
            alias[name] = alias_to
        return idx

    relation_names = list(kg.relation_names) + list(AUX_RELATIONS)
    rel_desc = {i: d for i, d in kg.relation_desc.items()}
    base = len(kg.relation_names)
    rel_desc[base] = ASKS_ABOUT_DESC
    rel_desc[base + 1] = OPTION_OF_DESC
    rel_desc[base + 2] = ANSWER_IS_DESC
    asks, option_of, answer_is = base, base + 1, base + 2

    triples = list(kg.triples)

    def wire_instance(inst: QaInstance, tag: str) -> tuple[int, list[int]]:
        copies: dict[str, int] = {}

        def local(name: str) -> int | None:
            if not tag:
                return ent_ids.get(name)
            if name not in ent_ids:
                return None
            if name not in copies:
                desc = kg.entity_desc.get(ent_ids[name])
                copies[name] = add_node(f"{tag}{name}", desc, alias_to=name)
            return copies[name]

        q_node = add_node(f"{tag}{QUESTION_NODE}", inst.question,
                          alias_to=QUESTION_ALIAS)
        linked_topics = 0
        for topic in inst.topics:
            tid = local(topic)
            if tid is None:
                log.warning("%s: topic %r not in the subgraph",
                            inst.instance_id, topic)
                continue
            triples.append((q_node, asks, tid))
            linked_topics += 1
        if not linked_topics:
            log.warning("%s: question wired to no topics", inst.instance_id)
        a_nodes = []
        for opt in inst.options:
            a_node = add_node(f"{tag}{answer_node_name(opt.label)}", opt.text,
                              alias_to=ANSWER_ALIAS)
            a_nodes.append(a_node)
            linked = 0
            for ent_name in opt.entities:
                eid = local(ent_name)
                if eid is None:
                    log.warning("%s: option %s entity %r not in the subgraph",
                                inst.instance_id, opt.label, ent_name)
                    continue
                triples.append((a_node, option_of, eid))
                linked += 1
            if not linked:
                log.warning("%s: option %s wired to no entities",
                            inst.instance_id, opt.label)
        return q_node, a_nodes

    q_node, a_nodes = wire_instance(instance, tag="")
    for k, example in enumerate(few_shot):
        ex_q, ex_answers = wire_instance(example, tag=f"F{k}:")
        triples.append((ex_q, answer_is, ex_answers[example.gold_index()]))

    merged = KnowledgeGraph(tuple(entity_names), tuple(relation_names),
                            tuple(triples), entity_desc, rel_desc)
    ctx = GraphContext(merged,
                       AliasedProvider(provider, alias,
                                       opaque=(QUESTION_ALIAS, ANSWER_ALIAS)),
                       include_self_loops,
                       unscored_relations=AUX_RELATIONS)
    return QaGraph(ctx=ctx, question_node=q_node, answer_nodes=a_nodes,
                   query_vec=query_feature(provider),
                   answer_relation=answer_is)


def retrieve_few_shot(instance: QaInstance, pool: list[QaInstance], k: int,
                      provider: TextProvider) -> list[QaInstance]:
    """The k most similar solved questions, excluding the instance itself."""
    if k == 0:
        return []
    candidates = [p for p in pool
                  if p.instance_id != instance.instance_id
                  and p.answer is not None]
    if not candidates:
        return []
    if k > len(candidates):
        log.warning("few-shot count %d clamped to pool size %d",
                    k, len(candidates))
        k = len(candidates)
    by_id = {p.instance_id: p for p in candidates}
    scored = [(p.instance_id, question_feature(provider, p.question))
              for p in candidates]
    query = question_feature(provider, instance.question)
    return [by_id[i] for i in top_k_similar(query, scored, k)]


def answer(model: Model, instance: QaInstance, provider: TextProvider,
           pool: list[QaInstance] | None = None, k: int = 0) -> tuple[str, np.ndarray]:
    """Pick an option; returns (label, probability over options)."""
    few_shot = retrieve_few_shot(instance, pool or [], k, provider)
    qa = build_qa_graph(instance, few_shot, provider)
    logits = score_queries(model, qa.ctx,
                           [(qa.question_node, qa.answer_relation)],
                           question_vec=qa.query_vec).data[0]
    option_logits = logits[qa.answer_nodes]
    shifted = np.exp(option_logits - option_logits.max())
    probs = shifted / shifted.sum()
    return instance.options[int(np.argmax(option_logits))].label, probs


def accuracy(predictions: list[str], golds: list[str]) -> float:
    if len(predictions) != len(golds):
        raise DataError(f"{len(predictions)} predictions vs {len(golds)} golds")
    if not golds:
        raise DataError("nothing to grade")
    return sum(p == g for p, g in zip(predictions, golds)) / len(golds)


def evaluate_qa(model: Model, instances: list[QaInstance],
                provider: TextProvider, pool: list[QaInstance] | None = None,
                k: int = 0) -> float:
    preds = [answer(model, inst, provider, pool, k)[0] for inst in instances]
    return accuracy(preds, [inst.answer for inst in instances])


@dataclass
class FineTuneStats:
    losses: list[float] = field(default_factory=list)


DEFAULT_SCHEDULE = ((20, 3e-3), (40, 1e-3))


def fine_tune(model: Model, instances: list[QaInstance],
              provider: TextProvider, k: int = 3,
              schedule: tuple[tuple[int, float], ...] = DEFAULT_SCHEDULE,
              seed: int = 0,
              frozen: tuple[str, ...] = ()) -> FineTuneStats:
    """Optimize the answer objective: gold option against its siblings.

    `schedule` is a sequence of (epochs, lr) stages sharing one optimizer;
    a stage boundary only moves the learning rate.  Token matching needs a
    long low-rate tail to settle, so the default front-loads a fast stage
    and finishes slowly.
    """
    if not instances:
        raise DataError("no instances to fine-tune on")
    for inst in instances:
        if inst.answer is None:
            raise DataError(f"{inst.instance_id}: fine-tuning needs gold answers")
    rng = np.random.default_rng(seed)
    for name in Model.GROUP_NAMES:
        model.group(name).frozen = name in frozen
    stats = FineTuneStats()
    opt = Adam(model.param_groups(), lr=schedule[0][1])
    for epochs, lr in schedule:
        opt.lr = lr
        for _ in range(epochs):
            order = rng.permutation(len(instances))
            epoch_losses = []
            for idx in order:
                inst = instances[int(idx)]
                few_shot = retrieve_few_shot(inst, instances, k, provider)
                qa = build_qa_graph(inst, few_shot, provider)
                opt.zero_grad()
                logits = score_queries(model, qa.ctx,
                                       [(qa.question_node, qa.answer_relation)],
                                       question_vec=qa.query_vec)
                gold_pos = inst.gold_index()
                gold_col = qa.answer_nodes[gold_pos]
                neg_cols = [c for i, c in enumerate(qa.answer_nodes)
                            if i != gold_pos]
                loss = batch_bce(logits, np.array([gold_col]),
                                 np.array([neg_cols]))
                backward(loss, model.param_groups())
                opt.step()
                epoch_losses.append(loss.item())
            stats.losses.append(float(np.mean(epoch_losses)))
    return stats


ADAPT_WARMUP = ((20, 3e-3), (40, 1e-3))
ADAPT_MAIN = ((60, 1e-3),)


def adapt(model: Model, instances: list[QaInstance],
          provider: TextProvider, k: int = 3,
          warmup: tuple[tuple[int, float], ...] = ADAPT_WARMUP,
          main: tuple[tuple[int, float], ...] = ADAPT_MAIN,
          seed: int = 0) -> FineTuneStats:
    """Two-stage recipe: warm up around a neutral scorer, then release it.

    The edge scorer starts at zero, which scores every edge exactly 0.5,
    and stays frozen through the warmup, so token matching and propagation
    settle against a flat edge prior.  The main stage releases the scorer
    to move edge weight where the settled routes leave residual error.  A
    scorer that trains while everything else is still in flux tends to
    lock in whichever route cracks first, so the stages do not commute.
    """
    model.edge_scorer.w.data[:] = 0.0
    stats = fine_tune(model, instances, provider, k=k, schedule=warmup,
                      seed=seed, frozen=("edge_scorer",))
    main_stats = fine_tune(model, instances, provider, k=k, schedule=main,
                           seed=seed + 1)
    stats.losses.extend(main_stats.losses)
    return stats


def load_qa_file(path: str) -> list[QaInstance]:
    """One JSON object per line; graph paths resolve relative to the file."""
    base_dir = os.path.dirname(os.path.abspath(path))
    graphs: dict[str, KnowledgeGraph] = {}
    instances = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                raw = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: invalid JSON ({exc})") from None
            try:
                graph_rel = raw["graph"]
                graph_path = os.path.normpath(os.path.join(base_dir, graph_rel))
                if graph_path not in graphs:
                    gdir = os.path.dirname(graph_path)
                    e_desc = os.path.join(gdir, "entity_desc.txt")
                    r_desc = os.path.join(gdir, "relation_desc.txt")
                    graphs[graph_path] = load_kg(
                        graph_path,
                        e_desc if os.path.exists(e_desc) else None,
                        r_desc if os.path.exists(r_desc) else None)
                options = [QaOption(label=o["label"], text=o["text"],
                                    entities=list(o.get("entities", ())))
                           for o in raw["options"]]
                instances.append(QaInstance(
                    instance_id=str(raw["id"]),
                    question=raw["question"],
                    options=options,
                    topics=list(raw.get("topics", ())),
                    kg=graphs[graph_path],
                    answer=raw.get("answer")))
            except KeyError as exc:
                raise DataError(f"{path}:{lineno}: missing field {exc}") from None
    if not instances:
        raise DataError(f"{path}: no instances")
    return instances
