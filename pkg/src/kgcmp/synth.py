"""Seeded synthetic data: random graphs, compositional splits, QA sets.

Everything here is deterministic in the seed so end-to-end runs are
reproducible down to the byte.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .graph import DataError, InductiveSplit, KnowledgeGraph, build_kg


def toy_kg(n_entities: int = 20, n_relations: int = 4, n_triples: int = 60,
           seed: int = 0) -> KnowledgeGraph:
    """A random multi-relational graph with every relation in use."""
    max_triples = n_entities * (n_entities - 1) * n_relations
    if n_triples > max_triples:
        raise DataError(f"cannot place {n_triples} distinct triples")
    rng = np.random.default_rng(seed)
    triples: list[tuple[str, str, str]] = []
    seen: set[tuple[int, int, int]] = set()
    # One edge per relation first, so none is left unused.
    for r in range(n_relations):
        while True:
            h, t = rng.integers(0, n_entities, size=2)
            if h != t and (h, r, t) not in seen:
                break
        seen.add((int(h), r, int(t)))
    while len(seen) < n_triples:
        h, t = rng.integers(0, n_entities, size=2)
        r = int(rng.integers(0, n_relations))
        if h != t and (int(h), r, int(t)) not in seen:
            seen.add((int(h), r, int(t)))
    for h, r, t in sorted(seen):
        triples.append((f"e{h}", f"rel{r}", f"e{t}"))
    desc = {f"e{i}": f"entity number {i}" for i in range(n_entities)}
    rdesc = {f"rel{r}": f"relation kind {r}" for r in range(n_relations)}
    return build_kg(triples, desc, rdesc)


def toy_split(kg: KnowledgeGraph) -> InductiveSplit:
    """Wrap a graph as a transductive split whose positives are its edges."""
    names = tuple(
        (kg.entity_names[h], kg.relation_names[r], kg.entity_names[t])
        for h, r, t in kg.triples)
    return InductiveSplit(train_graph=kg, valid_graph=kg, test_graph=kg,
                          train_triples=names, valid_triples=names[:1],
                          test_triples=(), entities_shared=True,
                          relations_shared=True)


def composition_split(n_groups: int = 16, prefix: str = "",
                      rels: tuple[str, str, str] = ("r1", "r2", "r3"),
                      context_frac: float = 0.5, eval_frac: float = 0.25,
                      seed: int = 0) -> InductiveSplit:
    """Chains (a -r1-> b -r2-> c) with the composed shortcut a -r3-> c.

    Groups split three ways: a context share whose shortcut edge sits in the
    message graph, a training share whose shortcut is a held-out positive,
    and an evaluation share.  Chains are always in the message graph, so
    predicting a held-out shortcut requires composing the two hops.
    """
    if n_groups < 4:
        raise DataError("need at least four groups to split three ways")
    rng = np.random.default_rng(seed)
    order = rng.permutation(n_groups)
    n_ctx = max(1, int(round(n_groups * context_frac)))
    n_eval = max(1, int(round(n_groups * eval_frac)))
    if n_ctx + n_eval >= n_groups:
        raise DataError("context and eval fractions leave no training groups")
    ctx_groups = set(order[:n_ctx].tolist())
    eval_groups = set(order[n_ctx:n_ctx + n_eval].tolist())

    def ent(kind: str, i: int) -> str:
        return f"{prefix}{kind}{i}"

    r1, r2, r3 = rels
    context: list[tuple[str, str, str]] = []
    train: list[tuple[str, str, str]] = []
    evals: list[tuple[str, str, str]] = []
    for i in range(n_groups):
        a, b, c = ent("a", i), ent("b", i), ent("c", i)
        context.append((a, r1, b))
        context.append((b, r2, c))
        shortcut = (a, r3, c)
        if i in ctx_groups:
            context.append(shortcut)
        elif i in eval_groups:
            evals.append(shortcut)
        else:
            train.append(shortcut)
    desc = {}
    for i in range(n_groups):
        desc[ent("a", i)] = f"{prefix}source point {i}"
        desc[ent("b", i)] = f"{prefix}middle point {i}"
        desc[ent("c", i)] = f"{prefix}end point {i}"
    rdesc = {r1: "first hop", r2: "second hop", r3: "composed shortcut"}
    graph = build_kg(context, desc, rdesc)
    half = max(1, len(evals) // 2)
    return InductiveSplit(train_graph=graph, valid_graph=graph,
                          test_graph=graph,
                          train_triples=tuple(train),
                          valid_triples=tuple(evals[:half]),
                          test_triples=tuple(evals[half:]),
                          entities_shared=True, relations_shared=True)


@dataclass
class QaOption:
    label: str
    text: str
    entities: list[str]


@dataclass
class QaInstance:
    """One multiple-choice question grounded in a knowledge graph."""
    instance_id: str
    question: str
    options: list[QaOption]
    topics: list[str]
    kg: KnowledgeGraph
    answer: str | None = None

    def __post_init__(self):
        if len(self.options) < 2:
            raise DataError(f"{self.instance_id}: need at least two options")
        labels = [o.label for o in self.options]
        if len(set(labels)) != len(labels):
            raise DataError(f"{self.instance_id}: duplicate option labels")
        if self.answer is not None and self.answer not in labels:
            raise DataError(f"{self.instance_id}: answer {self.answer!r} "
                            f"is not an option label")

    def gold_index(self) -> int:
        if self.answer is None:
            raise DataError(f"{self.instance_id}: no gold answer")
        return [o.label for o in self.options].index(self.answer)


@dataclass
class QaCurriculum:
    kg: KnowledgeGraph
    train: list[QaInstance]
    test: list[QaInstance]
    membership_relation: str = "in_group"
    noise_pairs: tuple[tuple[str, str], ...] = ()


def qa_curriculum(n_groups: int = 6, members_per_group: int = 4,
                  n_options: int = 4, n_train: int = 50, n_test: int = 20,
                  seed: int = 0) -> QaCurriculum:
    """Group-membership questions over a shared graph.

    Questions give the item index in text and the family only through the
    topic link.  Every member also carries one planted membership edge in a
    wrong family, arranged so each (family, item) slot has exactly one
    planted impostor.  The distractors then split the evidence: the sibling
    option is a true member of the asked family with the wrong item index,
    so only matching the item token rejects it; the decoy option has the
    right item index but reaches the asked family through its planted edge,
    so only distrusting that edge rejects it.  Planted edges use the same
    relation as real ones, which keeps relation-level features from
    explaining them away; option texts always restate the linked member, so
    no consistency shortcut separates gold from the distractors; and member
    texts identify the member by a private serial instead of naming its
    family, so no text comparison reveals which membership is planted.

    Every (member, family) pair appears in the training questions when
    `n_train` allows, and each question carries its id as a serial token so
    whole-question features never repeat between instances.
    """
    if n_options < 3:
        raise DataError("need gold plus both distractor kinds")
    if members_per_group < 2:
        raise DataError("sibling options need two members per group")
    if n_groups < 3:
        raise DataError("foreign options need a third family")
    rng = np.random.default_rng(seed)

    def member_name(g: int, i: int) -> str:
        return f"m{g}_{i}"

    def group_name(g: int) -> str:
        return f"family{g}"

    # Families share one description, so which family a node is can only be
    # read off the membership edges, never off its text.
    serials = rng.choice(900, size=n_groups * members_per_group,
                         replace=False) + 100
    triples: list[tuple[str, str, str]] = []
    desc: dict[str, str] = {}
    for g in range(n_groups):
        desc[group_name(g)] = "a collection of related items"
        for i in range(members_per_group):
            name = member_name(g, i)
            desc[name] = f"item{i} s{serials[g * members_per_group + i]}"
            triples.append((name, "in_group", group_name(g)))

    # Rotating the family index by a fixed nonzero shift per item column
    # plants exactly one impostor per (family, item) slot and gives every
    # member exactly one true and one planted membership.
    shifts = [int(rng.integers(1, n_groups)) for _ in range(members_per_group)]
    planted: list[tuple[str, str]] = []
    for g in range(n_groups):
        for i in range(members_per_group):
            impostor = member_name((g + shifts[i]) % n_groups, i)
            planted.append((impostor, group_name(g)))
    triples.extend((m, "in_group", f) for m, f in planted)
    planted_set = set(planted)
    rdesc = {"in_group": "is a member of the listed family"}
    kg = build_kg(triples, desc, rdesc)

    def make_instance(idx: int, tag: str,
                      combo: tuple[int, int] | None = None) -> QaInstance:
        if combo is None:
            g = int(rng.integers(0, n_groups))
            gold_i = int(rng.integers(0, members_per_group))
        else:
            g, gold_i = combo
        others = [i for i in range(members_per_group) if i != gold_i]
        sibling_i = others[int(rng.integers(0, len(others)))]
        gold = member_name(g, gold_i)
        sibling = member_name(g, int(sibling_i))
        decoy = member_name((g + shifts[gold_i]) % n_groups, gold_i)
        chosen = [gold, sibling, decoy]
        while len(chosen) < n_options:
            og = int(rng.integers(0, n_groups))
            oi = int(rng.integers(0, members_per_group))
            cand = member_name(og, oi)
            if (og == g or oi == gold_i or cand in chosen
                    or (cand, group_name(g)) in planted_set):
                continue
            chosen.append(cand)
        order = rng.permutation(len(chosen))
        labels = [chr(ord("A") + k) for k in range(len(chosen))]
        options = [QaOption(label=labels[k], text=desc[chosen[int(o)]],
                            entities=[chosen[int(o)]])
                   for k, o in enumerate(order)]
        answer = labels[int(np.argwhere(order == 0)[0][0])]
        question = f"{tag}{idx} asks for item{gold_i}"
        return QaInstance(instance_id=f"{tag}{idx}", question=question,
                          options=options, topics=[group_name(g)], kg=kg,
                          answer=answer)

    combos = [(g, i) for g in range(n_groups)
              for i in range(members_per_group)]
    schedule: list[tuple[int, int] | None] = []
    while len(schedule) < n_train:
        block = [combos[int(j)] for j in rng.permutation(len(combos))]
        schedule.extend(block)
    train = [make_instance(i, "train", schedule[i]) for i in range(n_train)]
    test = [make_instance(i, "test") for i in range(n_test)]
    return QaCurriculum(kg=kg, train=train, test=test,
                        noise_pairs=tuple(planted))
