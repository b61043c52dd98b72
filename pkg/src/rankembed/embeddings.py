"""Finished embedding tables: lookup, Euclidean neighbors and the text format."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import NUM_SPECIALS, SPECIALS, Vocabulary, normalize_token
from .errors import DataError, ParseError
from .model import RankingParams


@dataclass
class EmbeddingStore:
    vocab: Vocabulary
    matrix: np.ndarray

    def __post_init__(self) -> None:
        if self.matrix.ndim != 2 or self.matrix.shape[0] != len(self.vocab):
            raise DataError(f"matrix shape {self.matrix.shape} does not match vocabulary size {len(self.vocab)}")
        if not np.isfinite(self.matrix).all():
            raise DataError("embedding matrix contains non-finite values")

    @classmethod
    def from_params(cls, vocab: Vocabulary, params: RankingParams) -> "EmbeddingStore":
        return cls(vocab, np.array(params.C, dtype=np.float64))

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def lookup_id(self, token: str) -> int:
        """Id of ``token`` (tried verbatim, then normalized); specials are not queryable."""
        for form in (token, normalize_token(token) if token else token):
            i = self.vocab.index.get(form)
            if i is not None and i >= NUM_SPECIALS:
                return i
        attempted = normalize_token(token) if token else token
        raise DataError(f"word not in vocabulary: {token!r} (normalized form {attempted!r})")

    def vector(self, token: str) -> np.ndarray:
        return self.matrix[self.lookup_id(token)]


@dataclass(frozen=True)
class NeighborList:
    query: str
    neighbors: list[tuple[str, float]]


def distance(store: EmbeddingStore, t1: str, t2: str) -> float:
    return float(np.linalg.norm(store.vector(t1) - store.vector(t2)))


def nearest_neighbors(store: EmbeddingStore, query: str, k: int = 5) -> NeighborList:
    """The ``k`` non-special tokens closest to ``query``; ties go to the lower id."""
    if k < 1:
        raise ValueError("k must be >= 1")
    qid = store.lookup_id(query)
    cand = store.matrix[NUM_SPECIALS:]
    dists = np.linalg.norm(cand - store.matrix[qid], axis=1)
    ids = np.arange(NUM_SPECIALS, len(store.vocab))
    keep = ids != qid
    dists, ids = dists[keep], ids[keep]
    order = np.lexsort((ids, dists))[:k]
    tokens = store.vocab.tokens
    return NeighborList(
        store.vocab.entries[qid][0],
        [(tokens[i], float(d)) for i, d in zip(ids[order], dists[order])],
    )


def _fmt(x: float) -> str:
    s = repr(float(x))
    return s[:-2] if s.endswith(".0") else s


def export_text(store: EmbeddingStore, path: str | Path) -> None:
    """Write ``<V> <M>`` then one ``token v1 ... vM`` line per id, shortest round-trip decimals."""
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"{len(store.vocab)} {store.dim}\n")
        for (tok, _), row in zip(store.vocab.entries, store.matrix):
            f.write(tok + " " + " ".join(_fmt(x) for x in row) + "\n")


def import_text(path: str | Path) -> EmbeddingStore:
    with open(path, encoding="utf-8") as f:
        lines = f.read().split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise DataError(f"{path}: empty embeddings file")
    header = lines[0].split(" ")
    if len(header) != 2 or not all(h.isdigit() for h in header):
        raise ParseError("expected header '<V> <M>'", 1, path)
    V, M = int(header[0]), int(header[1])
    if len(lines) - 1 != V:
        raise ParseError(f"header declares {V} rows, found {len(lines) - 1}", 1, path)
    tokens: list[str] = []
    seen: set[str] = set()
    matrix = np.empty((V, M), dtype=np.float64)
    for row, line in enumerate(lines[1:]):
        lineno = row + 2
        fields = line.split(" ")
        if len(fields) != M + 1:
            raise ParseError(f"expected {M} values, found {len(fields) - 1}", lineno, path)
        tok = fields[0]
        if tok in seen:
            raise ParseError(f"duplicate token {tok!r}", lineno, path)
        seen.add(tok)
        try:
            matrix[row] = [float(x) for x in fields[1:]]
        except ValueError:
            bad = next(x for x in fields[1:] if not _is_float(x))
            raise ParseError(f"non-numeric value {bad!r}", lineno, path) from None
        tokens.append(tok)
    if tuple(tokens[:NUM_SPECIALS]) != SPECIALS:
        raise ParseError(f"first rows must be the special tokens {SPECIALS}", 2, path)
    return EmbeddingStore(Vocabulary.from_tokens(tokens[NUM_SPECIALS:]), matrix)


def _is_float(s: str) -> bool:
    try:
        float(s)
    except ValueError:
        return False
    return True
