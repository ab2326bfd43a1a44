"""Table-text block construction, passage ranking, flattening and truncation.

One block per table row. Each block carries the row, the table's titles and
the passages linked from that row's cells. The flattened form is the single
string fed to encoders:

    [TAB] [TITLE] {title} [SECTITLE] {section} [DATA] {col} is {val}. ...
    [PSG] {passage text} [SEP] {passage text} ...

The [PSG] marker is always emitted, with empty payload when a row has no
links, so every block exposes both modality regions to pooling. Payloads are
whitespace-normalized at flattening time; the raw block stays verbatim.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, replace
from typing import Iterable

from .corpus import LinkMap, PassageCorpus, Table, TableCorpus
from .tokenizer import (DATA, PSG, SECTITLE, SEP, TAB, TITLE, TokenizerContract,
                        WHITESPACE, normalize_ws, word_tokens)


@dataclass(frozen=True)
class BlockPassage:
    passage_id: str
    title: str
    text: str


@dataclass(frozen=True)
class TableTextBlock:
    block_id: str
    table_id: str
    row_index: int
    header: list[str]
    row: list[str]
    title: str
    section_title: str
    passages: list[BlockPassage]


@dataclass(frozen=True)
class FlattenedBlock:
    block_id: str
    text: str
    table_span: tuple[int, int]   # [start, end) token indices, excludes the [TAB] marker
    text_span: tuple[int, int]    # [start, end) token indices, excludes the [PSG] marker
    token_count: int


def block_id_for(table_id: str, row_index: int) -> str:
    return f"{table_id}-{row_index}"


def build_blocks(tables: TableCorpus, passages: PassageCorpus,
                 links: LinkMap) -> list[TableTextBlock]:
    """One block per table row; passages attached per that row's cell links."""
    blocks: list[TableTextBlock] = []
    for table in tables:
        for row_index, row in enumerate(table.rows):
            pids = links.passages_for_row(table.table_id, row_index)
            attached = [BlockPassage(pid, passages.by_id[pid].title, passages.by_id[pid].text)
                        for pid in pids]
            blocks.append(TableTextBlock(
                block_id=block_id_for(table.table_id, row_index),
                table_id=table.table_id,
                row_index=row_index,
                header=list(table.header),
                row=list(row),
                title=table.title,
                section_title=table.section_title,
                passages=attached,
            ))
    return blocks


# ---------------------------------------------------------------------------
# flattening


def table_region_text(block: TableTextBlock) -> str:
    """Marker-free table-side surface text (titles + is-clauses)."""
    clauses = " ".join(f"{normalize_ws(c)} is {normalize_ws(v)}."
                       for c, v in zip(block.header, block.row))
    return normalize_ws(f"{block.title} {block.section_title} {clauses}")


def passage_region_text(block: TableTextBlock) -> str:
    """Marker-free passage-side surface text (passage bodies in block order)."""
    return normalize_ws(" ".join(p.text for p in block.passages))


def flatten(block: TableTextBlock,
            tokenizer: TokenizerContract = WHITESPACE) -> FlattenedBlock:
    """Deterministic marker-delimited string plus token spans for both regions."""
    parts = [TAB, TITLE, normalize_ws(block.title), SECTITLE,
             normalize_ws(block.section_title), DATA]
    for col, val in zip(block.header, block.row):
        parts.append(f"{normalize_ws(col)} is {normalize_ws(val)}.")
    parts.append(PSG)
    passage_texts = [normalize_ws(p.text) for p in block.passages]
    parts.append(f" {SEP} ".join(passage_texts))
    text = normalize_ws(" ".join(parts))

    tokens = tokenizer.tokenize(text)
    psg_pos = tokens.index(PSG)
    return FlattenedBlock(
        block_id=block.block_id,
        text=text,
        table_span=(1, psg_pos),
        text_span=(psg_pos + 1, len(tokens)),
        token_count=len(tokens),
    )


def truncate(flat: FlattenedBlock, budget: int,
             tokenizer: TokenizerContract = WHITESPACE) -> FlattenedBlock:
    """Cut tokens from the passage tail until the block fits the budget.

    The table segment (everything through the [PSG] marker) is never cut;
    a budget smaller than that is an error the caller must resolve by
    raising the budget.
    """
    if flat.token_count <= budget:
        return flat
    table_segment = flat.text_span[0]  # tokens up to and including [PSG]
    if budget < table_segment:
        raise ValueError(
            f"budget {budget} smaller than table segment ({table_segment} tokens) "
            f"of block {flat.block_id}")
    tokens = tokenizer.tokenize(flat.text)[:budget]
    return replace(
        flat,
        text=" ".join(tokens),
        text_span=(flat.text_span[0], budget),
        token_count=budget,
    )


# ---------------------------------------------------------------------------
# TF-IDF passage ranking


class TfidfStats:
    """Document frequencies over the passage corpus for TF-IDF scoring.

    idf(t) = ln((1 + N) / (1 + df(t))) + 1, the smoothed form; unseen terms
    get df = 0.
    """

    def __init__(self, passages: Iterable[str]):
        self.df: Counter = Counter()
        self.n_docs = 0
        for text in passages:
            self.n_docs += 1
            self.df.update(set(word_tokens(text)))

    @classmethod
    def from_corpus(cls, passages: PassageCorpus) -> "TfidfStats":
        return cls(p.text for p in passages)

    def idf(self, term: str) -> float:
        return math.log((1 + self.n_docs) / (1 + self.df.get(term, 0))) + 1.0

    def vector(self, text: str) -> dict[str, float]:
        return {t: tf * self.idf(t) for t, tf in Counter(word_tokens(text)).items()}

    def cosine(self, a: str, b: str) -> float:
        va, vb = self.vector(a), self.vector(b)
        if not va or not vb:
            return 0.0
        dot = sum(w * vb[t] for t, w in va.items() if t in vb)
        na = math.sqrt(sum(w * w for w in va.values()))
        nb = math.sqrt(sum(w * w for w in vb.values()))
        if na == 0.0 or nb == 0.0:
            return 0.0
        return dot / (na * nb)


def rank_passages_tfidf(block: TableTextBlock, stats: TfidfStats) -> TableTextBlock:
    """Reorder passages by TF-IDF cosine to the table side, ties by passage_id.

    The query side is the table schema and content: header, row cells and
    both titles. Run before flattening so truncation drops the least
    relevant passages first.
    """
    query = " ".join([*block.header, *block.row, block.title, block.section_title])
    scored = sorted(
        block.passages,
        key=lambda p: (-stats.cosine(p.text, query), p.passage_id),
    )
    return replace(block, passages=scored)


# ---------------------------------------------------------------------------
# serialization


def block_record(b: TableTextBlock) -> dict:
    return {"block_id": b.block_id, "table_id": b.table_id, "row_index": b.row_index,
            "header": b.header, "row": b.row, "title": b.title,
            "section_title": b.section_title,
            "passages": [{"passage_id": p.passage_id, "title": p.title, "text": p.text}
                         for p in b.passages]}


def block_from_record(rec: dict) -> TableTextBlock:
    return TableTextBlock(
        block_id=rec["block_id"], table_id=rec["table_id"], row_index=rec["row_index"],
        header=list(rec["header"]), row=list(rec["row"]), title=rec["title"],
        section_title=rec["section_title"],
        passages=[BlockPassage(p["passage_id"], p["title"], p["text"])
                  for p in rec["passages"]])


def flat_record(f: FlattenedBlock) -> dict:
    return {"block_id": f.block_id, "text": f.text, "table_span": list(f.table_span),
            "text_span": list(f.text_span), "token_count": f.token_count}


def flat_from_record(rec: dict) -> FlattenedBlock:
    return FlattenedBlock(rec["block_id"], rec["text"], tuple(rec["table_span"]),
                          tuple(rec["text_span"]), rec["token_count"])
