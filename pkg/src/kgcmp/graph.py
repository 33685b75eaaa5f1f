"""Knowledge-graph data model: TSV ingestion, inverse augmentation, and
lifting the entity graph into a graph over relations.

All types are immutable after construction and safe for concurrent reads.
"""
from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

log = logging.getLogger(__name__)

META_RELATIONS = ("h2h", "h2t", "t2h", "t2t")
INVERSE_SUFFIX = "^-1"


class DataError(ValueError):
    """Malformed input file or inconsistent graph reference."""


@dataclass(frozen=True)
class KnowledgeGraph:
    """Entities, relations and triples with dense ids plus symbol tables.

    `descriptions` maps dense ids to UTF-8 text; entries may be missing.
    `inverse_of` is populated only after inverse augmentation and maps each
    relation id to its partner.
    """
    entity_names: tuple[str, ...]
    relation_names: tuple[str, ...]
    triples: tuple[tuple[int, int, int], ...]
    entity_desc: dict[int, str] = field(default_factory=dict)
    relation_desc: dict[int, str] = field(default_factory=dict)
    inverse_of: dict[int, int] = field(default_factory=dict)

    def __post_init__(self):
        ne, nr = len(self.entity_names), len(self.relation_names)
        if len(set(self.entity_names)) != ne or len(set(self.relation_names)) != nr:
            raise DataError("symbol table is not injective")
        for h, r, t in self.triples:
            if not (0 <= h < ne and 0 <= t < ne and 0 <= r < nr):
                raise DataError(f"triple ({h},{r},{t}) references unknown ids")

    @property
    def num_entities(self) -> int:
        return len(self.entity_names)

    @property
    def num_relations(self) -> int:
        return len(self.relation_names)

    @property
    def is_augmented(self) -> bool:
        return bool(self.inverse_of)

    def entity_id(self, name: str) -> int:
        try:
            return self.entity_names.index(name)
        except ValueError:
            raise DataError(f"unknown entity {name!r}") from None

    def relation_id(self, name: str) -> int:
        try:
            return self.relation_names.index(name)
        except ValueError:
            raise DataError(f"unknown relation {name!r}") from None

    def edge_arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Triples as (heads, relations, tails) int64 arrays."""
        if not self.triples:
            z = np.zeros(0, dtype=np.int64)
            return z, z.copy(), z.copy()
        arr = np.asarray(self.triples, dtype=np.int64)
        return arr[:, 0], arr[:, 1], arr[:, 2]


@dataclass(frozen=True)
class RelationGraph:
    """Edges (relA, meta, relB) over the relation ids of a source graph."""
    num_relations: int
    edges: tuple[tuple[int, int, int], ...]  # (rel, meta index, rel)

    def __post_init__(self):
        for a, m, b in self.edges:
            if not (0 <= a < self.num_relations and 0 <= b < self.num_relations):
                raise DataError(f"relation-graph edge ({a},{m},{b}) out of range")
            if not 0 <= m < len(META_RELATIONS):
                raise DataError(f"unknown meta-relation index {m}")

    def edge_arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        if not self.edges:
            z = np.zeros(0, dtype=np.int64)
            return z, z.copy(), z.copy()
        arr = np.asarray(self.edges, dtype=np.int64)
        return arr[:, 0], arr[:, 1], arr[:, 2]


@dataclass(frozen=True)
class InductiveSplit:
    """Graphs and evaluation triples for one dataset directory.

    `train_triples` are the positives used for optimization; they coincide
    with the train graph's edges in the plain transductive layout but may be
    a held-out set when train_graph.txt provides a separate message graph.
    """
    train_graph: KnowledgeGraph
    valid_graph: KnowledgeGraph
    test_graph: KnowledgeGraph
    train_triples: tuple[tuple[str, str, str], ...]
    valid_triples: tuple[tuple[str, str, str], ...]
    test_triples: tuple[tuple[str, str, str], ...]
    entities_shared: bool
    relations_shared: bool


# ---------------------------------------------------------------------------
# construction


def _read_tsv(path: str, columns: int) -> list[tuple[str, ...]]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != columns:
                raise DataError(
                    f"{path}:{lineno}: expected {columns} tab-separated fields, "
                    f"got {len(parts)}")
            rows.append(tuple(parts))
    return rows


def read_descriptions(path: str) -> dict[str, str]:
    """Read id<TAB>text rows; ids must be unique."""
    out: dict[str, str] = {}
    for lineno, (key, text) in enumerate(_read_tsv(path, 2), start=1):
        if key in out:
            raise DataError(f"{path}: duplicate description id {key!r}")
        out[key] = text
    return out


def load_triples(path: str) -> list[tuple[str, str, str]]:
    """Read head<TAB>relation<TAB>tail rows."""
    return [(h, r, t) for h, r, t in _read_tsv(path, 3)]


def build_kg(raw_triples: list[tuple[str, str, str]],
             entity_desc: dict[str, str] | None = None,
             relation_desc: dict[str, str] | None = None) -> KnowledgeGraph:
    """Assign dense ids in first-appearance order and drop duplicate triples."""
    ents: dict[str, int] = {}
    rels: dict[str, int] = {}
    triples: list[tuple[int, int, int]] = []
    seen: set[tuple[int, int, int]] = set()
    dupes = 0
    for h, r, t in raw_triples:
        hid = ents.setdefault(h, len(ents))
        rid = rels.setdefault(r, len(rels))
        tid = ents.setdefault(t, len(ents))
        trip = (hid, rid, tid)
        if trip in seen:
            dupes += 1
            continue
        seen.add(trip)
        triples.append(trip)
    if dupes:
        log.info("dropped %d duplicate triples", dupes)
    e_desc = {ents[k]: v for k, v in (entity_desc or {}).items() if k in ents}
    r_desc = {rels[k]: v for k, v in (relation_desc or {}).items() if k in rels}
    return KnowledgeGraph(tuple(ents), tuple(rels), tuple(triples), e_desc, r_desc)


def load_kg(triples_path: str,
            entity_desc_path: str | None = None,
            relation_desc_path: str | None = None) -> KnowledgeGraph:
    """Load a graph from a TSV triple file plus optional description files."""
    raw = load_triples(triples_path)
    e_desc = read_descriptions(entity_desc_path) if entity_desc_path else None
    r_desc = read_descriptions(relation_desc_path) if relation_desc_path else None
    return build_kg(raw, e_desc, r_desc)


def augment_inverses(kg: KnowledgeGraph) -> KnowledgeGraph:
    """Add an inverse relation and reversed triple for every forward one.

    Message passing needs to propagate against edge direction, so every
    graph is augmented before encoding unless explicitly disabled.
    """
    if kg.is_augmented:
        raise DataError("graph is already inverse-augmented")
    nr = kg.num_relations
    names = list(kg.relation_names)
    for name in kg.relation_names:
        inv = name + INVERSE_SUFFIX
        if inv in names:
            raise DataError(f"inverse name collision for {name!r}")
        names.append(inv)
    triples = list(kg.triples)
    for h, r, t in kg.triples:
        triples.append((t, r + nr, h))
    inverse_of = {r: r + nr for r in range(nr)}
    inverse_of.update({r + nr: r for r in range(nr)})
    r_desc = dict(kg.relation_desc)
    for r in range(nr):
        if r in kg.relation_desc:
            r_desc[r + nr] = "inverse of: " + kg.relation_desc[r]
    return KnowledgeGraph(kg.entity_names, tuple(names), tuple(triples),
                          dict(kg.entity_desc), r_desc, inverse_of)


def lift_relation_graph(kg: KnowledgeGraph, include_self_loops: bool = True) -> RelationGraph:
    """Build the relation graph via boolean incidence-matrix products.

    H[e, r] marks entity e appearing as a head of relation r, T likewise for
    tails.  Then e.g. T^t @ H > 0 yields every (rA, t2h, rB) pair sharing an
    entity that is a tail of rA and a head of rB.  The product's diagonal
    gives relation self-interactions; `include_self_loops` keeps or drops it.
    """
    if kg.num_relations == 0:
        raise DataError("cannot lift a graph with no relations")
    ne, nr = kg.num_entities, kg.num_relations
    heads, rels, tails = kg.edge_arrays()
    ones = np.ones(len(heads), dtype=bool)
    H = sp.csr_matrix((ones, (heads, rels)), shape=(ne, nr), dtype=bool)
    T = sp.csr_matrix((ones, (tails, rels)), shape=(ne, nr), dtype=bool)
    products = {
        "h2h": H.T @ H,
        "h2t": H.T @ T,
        "t2h": T.T @ H,
        "t2t": T.T @ T,
    }
    edges: set[tuple[int, int, int]] = set()
    for meta_idx, meta in enumerate(META_RELATIONS):
        mat = products[meta].tocoo()
        for a, b in zip(mat.row, mat.col):
            if not include_self_loops and a == b:
                continue
            edges.add((int(a), meta_idx, int(b)))
    return RelationGraph(nr, tuple(sorted(edges)))


def lift_bruteforce(kg: KnowledgeGraph, include_self_loops: bool = True) -> set[tuple[int, int, int]]:
    """O(|T|^2) double-loop oracle for `lift_relation_graph`."""
    meta_index = {m: i for i, m in enumerate(META_RELATIONS)}
    edges: set[tuple[int, int, int]] = set()
    for h1, r1, t1 in kg.triples:
        for h2, r2, t2 in kg.triples:
            if not include_self_loops and r1 == r2:
                continue
            if h1 == h2:
                edges.add((r1, meta_index["h2h"], r2))
            if h1 == t2:
                edges.add((r1, meta_index["h2t"], r2))
            if t1 == h2:
                edges.add((r1, meta_index["t2h"], r2))
            if t1 == t2:
                edges.add((r1, meta_index["t2t"], r2))
    return edges


def load_split(directory: str) -> InductiveSplit:
    """Load a split directory.

    Mandatory: train.txt, valid.txt, test.txt (evaluation triples).
    Optional: train_graph.txt (inference graph for train/valid; defaults to
    train.txt itself) and test_graph.txt (required for inductive datasets;
    defaults to the train graph).
    """
    def need(name: str) -> str:
        p = os.path.join(directory, name)
        if not os.path.exists(p):
            raise DataError(f"split directory {directory} is missing {name}")
        return p

    def optional(name: str) -> str | None:
        p = os.path.join(directory, name)
        return p if os.path.exists(p) else None

    train_eval = load_triples(need("train.txt"))
    valid_eval = load_triples(need("valid.txt"))
    test_eval = load_triples(need("test.txt"))

    e_desc_path = optional("entity_desc.txt")
    r_desc_path = optional("relation_desc.txt")
    e_desc = read_descriptions(e_desc_path) if e_desc_path else None
    r_desc = read_descriptions(r_desc_path) if r_desc_path else None

    train_graph_path = optional("train_graph.txt")
    train_raw = load_triples(train_graph_path) if train_graph_path else train_eval
    train_graph = build_kg(train_raw, e_desc, r_desc)
    valid_graph = train_graph

    test_graph_path = optional("test_graph.txt")
    if test_graph_path:
        test_graph = build_kg(load_triples(test_graph_path), e_desc, r_desc)
    else:
        test_graph = train_graph

    tr_ents, te_ents = set(train_graph.entity_names), set(test_graph.entity_names)
    tr_rels, te_rels = set(train_graph.relation_names), set(test_graph.relation_names)
    return InductiveSplit(
        train_graph=train_graph,
        valid_graph=valid_graph,
        test_graph=test_graph,
        train_triples=tuple(train_eval),
        valid_triples=tuple(valid_eval),
        test_triples=tuple(test_eval),
        entities_shared=bool(tr_ents & te_ents),
        relations_shared=bool(tr_rels & te_rels),
    )
