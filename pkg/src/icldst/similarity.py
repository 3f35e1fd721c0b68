"""Okapi BM25 over candidate-pool utterances.

Scoring uses the non-negative IDF form ln((N - df + 0.5)/(df + 0.5) + 1) and
sums one contribution per query token occurrence. The index is immutable
after build; score/top_k are pure.
"""

from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .corpus import BeliefState, PoolEntry
from .errors import UnknownDocumentError

DocId = tuple[str, int]

DEFAULT_K1 = 1.5
DEFAULT_B = 0.75

_TOKEN_RE = re.compile(r"[a-z0-9]+")


def tokenize(text: str) -> list[str]:
    """Lowercase and split on non-alphanumeric runs; digits kept, no stemming."""
    return _TOKEN_RE.findall(text.lower())


@dataclass(frozen=True)
class Candidate:
    """A ranked pool turn: `index` is its 0-based position in the ranked list."""

    index: int
    doc_id: DocId
    utterance: str
    label: BeliefState = field(default_factory=BeliefState.empty)
    score: float = 0.0
    prev_user: str | None = None
    prev_system: str | None = None


class Bm25Index:
    """Inverted statistics over a fixed document pool."""

    def __init__(self, pool: Sequence[tuple[DocId, str]], k1: float = DEFAULT_K1, b: float = DEFAULT_B):
        self.k1 = k1
        self.b = b
        self.doc_ids: list[DocId] = [doc_id for doc_id, _ in pool]
        self.utterances: list[str] = [text for _, text in pool]
        self.term_freqs: list[Counter] = [Counter(tokenize(text)) for text in self.utterances]
        self.doc_lens: list[int] = [sum(tf.values()) for tf in self.term_freqs]
        self.n_docs = len(pool)
        self.avgdl = (sum(self.doc_lens) / self.n_docs) if self.n_docs else 0.0
        df: Counter = Counter()
        for tf in self.term_freqs:
            df.update(tf.keys())
        self.doc_freqs: dict[str, int] = dict(df)
        self.idf = {
            term: math.log((self.n_docs - n + 0.5) / (n + 0.5) + 1.0)
            for term, n in self.doc_freqs.items()
        }
        self._position = {}
        for pos, doc_id in enumerate(self.doc_ids):
            self._position.setdefault(doc_id, pos)

    def _score_at(self, position: int, query: Sequence[str]) -> float:
        tf = self.term_freqs[position]
        dl = self.doc_lens[position]
        norm = self.k1 * (1.0 - self.b + self.b * dl / self.avgdl) if self.avgdl else 0.0
        total = 0.0
        for term in query:
            f = tf.get(term, 0)
            if f == 0:
                continue
            total += self.idf[term] * f * (self.k1 + 1.0) / (f + norm)
        return total


def build_index(pool: Sequence[tuple[DocId, str]], k1: float = DEFAULT_K1, b: float = DEFAULT_B) -> Bm25Index:
    return Bm25Index(pool, k1=k1, b=b)


def score(index: Bm25Index, query: Sequence[str], doc_id: DocId) -> float:
    position = index._position.get(doc_id)
    if position is None:
        raise UnknownDocumentError(f"doc_id {doc_id!r} not in index")
    return index._score_at(position, query)


def top_k(
    index: Bm25Index,
    query: str,
    k: int,
    meta: Mapping[DocId, PoolEntry] | None = None,
) -> list[Candidate]:
    """Up to k positive-scoring documents, best first.

    Ties break on (dialogue_id, turn_index) ascending. When `meta` is given,
    candidates carry the pool turn's label and one-exchange history.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    tokens = tokenize(query)
    scored = []
    for position in range(index.n_docs):
        s = index._score_at(position, tokens)
        if s > 0.0:
            scored.append((position, s))
    scored.sort(key=lambda item: (-item[1], index.doc_ids[item[0]]))
    out: list[Candidate] = []
    for rank, (position, s) in enumerate(scored[:k]):
        doc_id = index.doc_ids[position]
        entry = meta.get(doc_id) if meta else None
        out.append(Candidate(
            index=rank,
            doc_id=doc_id,
            utterance=index.utterances[position],
            label=entry.label if entry else BeliefState.empty(),
            score=s,
            prev_user=entry.prev_user if entry else None,
            prev_system=entry.prev_system if entry else None,
        ))
    return out
