"""Okapi BM25 over flattened block text.

Scoring uses the classic Okapi form with the +1-inside-log idf variant so
every term contributes a positive weight:

    idf(t)  = ln(1 + (N - df + 0.5) / (df + 0.5))
    s(q, D) = sum over query terms of
              idf(t) * tf * (k1 + 1) / (tf + k1 * (1 - b + b * |D| / avgdl))

Documents and queries share one tokenizer (lowercased word characters), so
segment markers participate as ordinary terms on both sides. Only documents
sharing at least one query term are scored; ties break by block id.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable

from .tokenizer import word_tokens

K1 = 1.2
B = 0.75


@dataclass
class SparseIndex:
    postings: dict[str, list[tuple[str, int]]]   # term -> [(block_id, tf)], sorted by id
    doc_len: dict[str, int]
    avgdl: float
    k1: float = K1
    b: float = B

    @property
    def n_docs(self) -> int:
        return len(self.doc_len)

    def idf(self, term: str) -> float:
        df = len(self.postings.get(term, ()))
        return math.log(1.0 + (self.n_docs - df + 0.5) / (df + 0.5))


def build_sparse(docs: Iterable[tuple[str, str]], k1: float = K1,
                 b: float = B) -> SparseIndex:
    """Index (block_id, text) pairs. Empty or duplicate documents are errors."""
    postings: dict[str, list[tuple[str, int]]] = {}
    doc_len: dict[str, int] = {}
    for doc_id, text in docs:
        if doc_id in doc_len:
            raise ValueError(f"duplicate document id {doc_id!r}")
        tokens = word_tokens(text)
        if not tokens:
            raise ValueError(f"document {doc_id!r} has no indexable terms")
        doc_len[doc_id] = len(tokens)
        for term, tf in Counter(tokens).items():
            postings.setdefault(term, []).append((doc_id, tf))
    for plist in postings.values():
        plist.sort()
    avgdl = sum(doc_len.values()) / len(doc_len) if doc_len else 0.0
    return SparseIndex(postings, doc_len, avgdl, k1, b)


def score_all(index: SparseIndex, query: str) -> dict[str, float]:
    """BM25 score for every document sharing a term with the query.

    Repeated query terms contribute once per occurrence, matching the
    plain sum-over-query-terms definition.
    """
    scores: dict[str, float] = {}
    k1, b, avgdl = index.k1, index.b, index.avgdl
    for term in word_tokens(query):
        plist = index.postings.get(term)
        if not plist:
            continue
        idf = index.idf(term)
        for doc_id, tf in plist:
            dl = index.doc_len[doc_id]
            denom = tf + k1 * (1.0 - b + b * dl / avgdl)
            scores[doc_id] = scores.get(doc_id, 0.0) + idf * tf * (k1 + 1.0) / denom
    return scores


def search_sparse(index: SparseIndex, query: str,
                  k: int) -> list[tuple[str, float]]:
    """Top-k by (score desc, block id asc); empty for termless queries."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    scores = score_all(index, query)
    ranked = sorted(scores.items(), key=lambda item: (-item[1], item[0]))
    return ranked[:k]
