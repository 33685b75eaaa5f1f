"""Seeded synthetic generators: graphs, splits, QA curriculum."""
import numpy as np
import pytest

from kgcmp.graph import DataError
from kgcmp.synth import (
    composition_split, qa_curriculum, toy_kg, toy_split,
)


class TestToyKg:
    def test_requested_sizes(self):
        kg = toy_kg(n_entities=12, n_relations=3, n_triples=30, seed=1)
        assert kg.num_entities == 12
        assert kg.num_relations == 3
        assert len(kg.triples) == 30

    def test_every_relation_used(self):
        kg = toy_kg(n_entities=8, n_relations=5, n_triples=10, seed=2)
        assert {r for _, r, _ in kg.triples} == set(range(5))

    def test_no_self_loops_or_duplicates(self):
        kg = toy_kg(seed=3)
        assert all(h != t for h, _, t in kg.triples)
        assert len(set(kg.triples)) == len(kg.triples)

    def test_deterministic_in_seed(self):
        assert toy_kg(seed=4).triples == toy_kg(seed=4).triples
        assert toy_kg(seed=4).triples != toy_kg(seed=5).triples

    def test_impossible_density_rejected(self):
        with pytest.raises(DataError):
            toy_kg(n_entities=3, n_relations=1, n_triples=100)

    def test_descriptions_cover_all_symbols(self):
        kg = toy_kg(seed=0)
        assert set(kg.entity_desc) == set(range(kg.num_entities))
        assert set(kg.relation_desc) == set(range(kg.num_relations))


class TestToySplit:
    def test_transductive_wrap(self):
        split = toy_split(toy_kg(seed=0))
        assert split.train_graph is split.valid_graph is split.test_graph
        assert split.entities_shared and split.relations_shared
        assert len(split.train_triples) == len(split.train_graph.triples)


class TestCompositionSplit:
    def test_chains_always_in_context(self):
        split = composition_split(n_groups=8, seed=0)
        kg = split.train_graph
        names = {(kg.entity_names[h], kg.relation_names[r],
                  kg.entity_names[t]) for h, r, t in kg.triples}
        for i in range(8):
            assert (f"a{i}", "r1", f"b{i}") in names
            assert (f"b{i}", "r2", f"c{i}") in names

    def test_every_shortcut_lands_in_exactly_one_share(self):
        split = composition_split(n_groups=8, seed=1)
        kg = split.train_graph
        in_ctx = {(kg.entity_names[h], kg.entity_names[t])
                  for h, r, t in kg.triples
                  if kg.relation_names[r] == "r3"}
        held = [(h, t) for h, _, t in
                split.train_triples + split.valid_triples + split.test_triples]
        assert not in_ctx & set(held)
        assert len(in_ctx) + len(held) == 8

    def test_held_out_shortcuts_use_r3(self):
        split = composition_split(n_groups=8, seed=2)
        for h, r, t in split.train_triples + split.test_triples:
            assert r == "r3"

    def test_too_few_groups_rejected(self):
        with pytest.raises(DataError):
            composition_split(n_groups=3)

    def test_greedy_fractions_rejected(self):
        with pytest.raises(DataError):
            composition_split(n_groups=8, context_frac=0.9, eval_frac=0.25)


class TestQaCurriculum:
    def setup_method(self):
        self.cur = qa_curriculum(seed=0)
        self.kg = self.cur.kg

    def names(self, triple):
        h, r, t = triple
        return (self.kg.entity_names[h], self.kg.relation_names[r],
                self.kg.entity_names[t])

    def test_entity_count_is_members_plus_families(self):
        assert self.kg.num_entities == 6 * 4 + 6

    def test_counts_match_defaults(self):
        assert len(self.cur.train) == 50
        assert len(self.cur.test) == 20
        assert all(len(i.options) == 4 for i in self.cur.train)

    def test_single_membership_relation(self):
        assert self.kg.relation_names == ("in_group",)

    def test_every_member_has_one_true_and_one_planted_edge(self):
        planted = set(self.cur.noise_pairs)
        by_member: dict[str, list[str]] = {}
        for tr in self.kg.triples:
            h, _, t = self.names(tr)
            by_member.setdefault(h, []).append(t)
        for g in range(6):
            for i in range(4):
                member = f"m{g}_{i}"
                fams = by_member[member]
                assert len(fams) == 2
                assert f"family{g}" in fams
                other = next(f for f in fams if f != f"family{g}")
                assert (member, other) in planted

    def test_each_family_slot_has_one_impostor(self):
        # For every (family, item) pair exactly one foreign member with that
        # item index is planted into the family.
        slots: dict[tuple[str, str], int] = {}
        for member, fam in self.cur.noise_pairs:
            item = member.split("_")[1]
            key = (fam, item)
            slots[key] = slots.get(key, 0) + 1
        assert len(slots) == 6 * 4
        assert set(slots.values()) == {1}

    def test_family_descriptions_are_identical(self):
        descs = {self.kg.entity_desc[self.kg.entity_id(f"family{g}")]
                 for g in range(6)}
        assert len(descs) == 1

    def test_member_descriptions_are_unique(self):
        descs = [self.kg.entity_desc[self.kg.entity_id(f"m{g}_{i}")]
                 for g in range(6) for i in range(4)]
        assert len(set(descs)) == len(descs)

    def test_member_text_never_names_its_family(self):
        for g in range(6):
            for i in range(4):
                desc = self.kg.entity_desc[self.kg.entity_id(f"m{g}_{i}")]
                assert "family" not in desc

    def test_question_text_carries_item_but_not_family(self):
        for inst in self.cur.train:
            gold = next(o for o in inst.options if o.label == inst.answer)
            g, i = gold.entities[0][1:].split("_")
            assert f"item{i}" in inst.question
            assert "family" not in inst.question

    def test_topic_is_the_gold_family(self):
        for inst in self.cur.train + self.cur.test:
            gold = next(o for o in inst.options if o.label == inst.answer)
            g = gold.entities[0][1:].split("_")[0]
            assert inst.topics == [f"family{g}"]

    def test_option_kinds_cover_both_distractors(self):
        planted = set(self.cur.noise_pairs)
        for inst in self.cur.train + self.cur.test:
            gold = next(o for o in inst.options if o.label == inst.answer)
            gg, gi = gold.entities[0][1:].split("_")
            kinds = set()
            for opt in inst.options:
                if opt.label == inst.answer:
                    continue
                og, oi = opt.entities[0][1:].split("_")
                if og == gg:
                    kinds.add("sibling")
                elif oi == gi:
                    kinds.add("decoy")
                else:
                    kinds.add("foreign")
                    # Foreign options never reach the asked family, not
                    # even through a planted edge.
                    assert (opt.entities[0], f"family{gg}") not in planted
            assert {"sibling", "decoy"} <= kinds

    def test_decoy_reaches_family_only_through_planted_edge(self):
        planted = set(self.cur.noise_pairs)
        for inst in self.cur.train:
            gold = next(o for o in inst.options if o.label == inst.answer)
            gg, gi = gold.entities[0][1:].split("_")
            for opt in inst.options:
                og, oi = opt.entities[0][1:].split("_")
                if opt.label != inst.answer and og != gg and oi == gi:
                    assert (opt.entities[0], f"family{gg}") in planted

    def test_option_text_restates_the_linked_member(self):
        for inst in self.cur.train:
            for opt in inst.options:
                eid = self.kg.entity_id(opt.entities[0])
                assert opt.text == self.kg.entity_desc[eid]

    def test_training_covers_every_family_item_slot(self):
        slots = set()
        for inst in self.cur.train:
            gold = next(o for o in inst.options if o.label == inst.answer)
            slots.add(gold.entities[0])
        assert len(slots) == 6 * 4

    def test_question_ids_are_unique_tokens(self):
        firsts = [inst.question.split()[0]
                  for inst in self.cur.train + self.cur.test]
        assert len(set(firsts)) == len(firsts)

    def test_deterministic_in_seed(self):
        a = qa_curriculum(seed=3)
        b = qa_curriculum(seed=3)
        assert a.kg.triples == b.kg.triples
        assert [i.question for i in a.train] == [i.question for i in b.train]
        c = qa_curriculum(seed=4)
        assert a.kg.triples != c.kg.triples

    def test_degenerate_configs_rejected(self):
        with pytest.raises(DataError):
            qa_curriculum(n_options=2)
        with pytest.raises(DataError):
            qa_curriculum(members_per_group=1)
        with pytest.raises(DataError):
            qa_curriculum(n_groups=2)
