"""Text feature providers.

Two interchangeable sources of fixed-dimension text vectors: a file-backed
table of precomputed embeddings (word2vec text format, produced offline)
and a deterministic hash embedder used for tests and desk-scale runs.
Also hosts cosine-similarity retrieval for few-shot example selection.
"""
from __future__ import annotations

import hashlib

import numpy as np


class EmbeddingError(ValueError):
    """Malformed embedding file or dimension mismatch."""


def _stable_seed(entity_id: str, text: str) -> int:
    digest = hashlib.blake2b(
        entity_id.encode("utf-8") + b"\x00" + text.encode("utf-8"),
        digest_size=8).digest()
    return int.from_bytes(digest, "little")


def hash_embed(entity_id: str, text: str, dim: int) -> np.ndarray:
    """Deterministic pseudo-embedding: seeded PRNG draw, L2-normalized.

    Identical (id, text, dim) gives bit-identical vectors on any platform.
    """
    rng = np.random.Generator(np.random.PCG64(_stable_seed(entity_id, text)))
    v = rng.standard_normal(dim)
    norm = np.linalg.norm(v)
    if norm == 0.0:  # astronomically unlikely, but keep the contract total
        v[0] = 1.0
        norm = 1.0
    return v / norm


class EmbeddingTable:
    """id -> vector map with a fallback for absent ids."""

    def __init__(self, dim: int, vectors: dict[str, np.ndarray] | None = None,
                 fallback: np.ndarray | None = None):
        self.dim = dim
        self.vectors = vectors or {}
        self.fallback = np.zeros(dim) if fallback is None else np.asarray(fallback, dtype=np.float64)
        if self.fallback.shape != (dim,):
            raise EmbeddingError(f"fallback shape {self.fallback.shape} != ({dim},)")
        for key, v in self.vectors.items():
            if v.shape != (dim,):
                raise EmbeddingError(f"vector for {key!r} has shape {v.shape}, expected ({dim},)")

    def __contains__(self, key: str) -> bool:
        return key in self.vectors

    def lookup(self, key: str) -> np.ndarray:
        return self.vectors.get(key, self.fallback)


def load_embeddings(path: str) -> EmbeddingTable:
    """Read a word2vec-style text file: header `<count> <dim>`, then rows."""
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 2:
            raise EmbeddingError(f"{path}:1: header must be '<count> <dim>'")
        try:
            count, dim = int(header[0]), int(header[1])
        except ValueError:
            raise EmbeddingError(f"{path}:1: non-integer header") from None
        vectors: dict[str, np.ndarray] = {}
        for lineno, line in enumerate(fh, start=2):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split(" ")
            if len(parts) != dim + 1:
                raise EmbeddingError(
                    f"{path}:{lineno}: expected id plus {dim} values, got {len(parts) - 1}")
            key = parts[0]
            if key in vectors:
                raise EmbeddingError(f"{path}:{lineno}: duplicate id {key!r}")
            try:
                vectors[key] = np.array([float(x) for x in parts[1:]], dtype=np.float64)
            except ValueError:
                raise EmbeddingError(f"{path}:{lineno}: non-numeric value") from None
    if len(vectors) != count:
        raise EmbeddingError(
            f"{path}: header promised {count} rows, found {len(vectors)}")
    return EmbeddingTable(dim, vectors)


def save_embeddings(path: str, table: EmbeddingTable, precision: int = 9) -> None:
    """Write the word2vec-style text format with fixed significant digits."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{len(table.vectors)} {table.dim}\n")
        for key in table.vectors:
            vals = " ".join(f"{x:.{precision}g}" for x in table.vectors[key])
            fh.write(f"{key} {vals}\n")


class TextProvider:
    """Uniform lookup surface over either embedding source.

    `vector(id, text)` returns the pooled per-id feature.  `tokens(id, text)`
    returns a (T, dim) matrix of token-level features for attention pooling;
    file-backed tables have no token resolution, so they expose the pooled
    vector as a single-token sequence.
    """

    dim: int

    def vector(self, entity_id: str, text: str | None) -> np.ndarray:
        raise NotImplementedError

    def tokens(self, entity_id: str, text: str | None) -> np.ndarray:
        raise NotImplementedError


class HashTextProvider(TextProvider):
    """Deterministic stand-in for language-model features."""

    def __init__(self, dim: int, missing_uses_id: bool = False):
        self.dim = dim
        self.missing_uses_id = missing_uses_id
        self._cache: dict[tuple[str, str | None], np.ndarray] = {}

    def vector(self, entity_id: str, text: str | None) -> np.ndarray:
        if text is None:
            if not self.missing_uses_id:
                return np.zeros(self.dim)
            text = ""
        return hash_embed(entity_id, text, self.dim)

    def tokens(self, entity_id: str, text: str | None) -> np.ndarray:
        key = (entity_id, text)
        cached = self._cache.get(key)
        if cached is not None:
            return cached
        if not text:
            out = self.vector(entity_id, text).reshape(1, self.dim)
        else:
            words = text.split()
            # Token vectors depend on the word alone so that shared words
            # produce shared feature components across descriptions.
            out = np.stack([hash_embed("", w, self.dim) for w in words])
        self._cache[key] = out
        return out


class FileTextProvider(TextProvider):
    """Backed by a precomputed table; ids resolve by string, text ignored."""

    def __init__(self, table: EmbeddingTable):
        self.table = table
        self.dim = table.dim

    def vector(self, entity_id: str, text: str | None) -> np.ndarray:
        return self.table.lookup(entity_id)

    def tokens(self, entity_id: str, text: str | None) -> np.ndarray:
        return self.vector(entity_id, text).reshape(1, self.dim)


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.dot(a, b) / (na * nb))


def top_k_similar(query_vec: np.ndarray,
                  pool: list[tuple[str, np.ndarray]],
                  k: int) -> list[str]:
    """Ids of the k pool vectors closest to the query by cosine similarity.

    Ties break by ascending id so retrieval is deterministic.
    """
    if not pool:
        raise EmbeddingError("similarity pool is empty")
    if k > len(pool):
        raise EmbeddingError(f"k={k} exceeds pool size {len(pool)}")
    scored = sorted(pool, key=lambda item: (-cosine(query_vec, item[1]), item[0]))
    return [ident for ident, _ in scored[:k]]
