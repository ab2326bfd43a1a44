"""Canonical data model for tables, passages, entity links and questions.

All corpus files are line-delimited JSON (one record per line, UTF-8) so the
multi-million-passage case never requires whole-file parsing. Loading
validates every structural invariant and raises :class:`CorpusError` with the
offending file, line and a stable ``kind`` tag. After loading, corpora are
immutable and safe to share across workers.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Iterator

from .tokenizer import normalize_ws

logger = logging.getLogger(__name__)

SPLITS = ("train", "dev", "test")


class CorpusError(Exception):
    """A classified corpus validation failure.

    ``kind`` is machine-checkable: malformed-record, missing-field,
    row-length-mismatch, duplicate-id, empty-header, empty-text,
    dangling-passage, dangling-table, index-out-of-range, bad-split,
    empty-answer.
    """

    def __init__(self, kind: str, message: str, path: str | Path | None = None,
                 line: int | None = None):
        self.kind = kind
        self.path = str(path) if path is not None else None
        self.line = line
        where = ""
        if self.path is not None:
            where = f" [{self.path}" + (f":{line}" if line is not None else "") + "]"
        super().__init__(f"{kind}: {message}{where}")


@dataclass(frozen=True)
class Table:
    table_id: str
    title: str
    section_title: str
    header: list[str]
    rows: list[list[str]]


@dataclass(frozen=True)
class Passage:
    passage_id: str
    title: str
    text: str


@dataclass(frozen=True)
class Question:
    question_id: str
    text: str
    answer: str
    gold_table_id: str
    split: str
    gold_row_index: int | None = None


class LinkMap:
    """Entity links: (table_id, row_index, cell_index) -> ordered passage ids.

    Multi-link cells keep their input order; no reordering is applied.
    """

    def __init__(self, entries: dict[tuple[str, int, int], list[str]] | None = None):
        self.entries: dict[tuple[str, int, int], list[str]] = dict(entries or {})

    def passages_for_row(self, table_id: str, row_index: int) -> list[str]:
        """Passage ids linked from any cell of one row, cell order then input order."""
        out: list[str] = []
        seen: set[str] = set()
        cells = sorted(
            (key for key in self.entries if key[0] == table_id and key[1] == row_index),
            key=lambda key: key[2],
        )
        for key in cells:
            for pid in self.entries[key]:
                if pid not in seen:
                    seen.add(pid)
                    out.append(pid)
        return out

    def linked_rows(self, table_id: str) -> set[int]:
        return {row for tid, row, _ in self.entries if tid == table_id}

    def linked_cells(self, table_id: str, row_index: int) -> set[int]:
        return {cell for tid, row, cell in self.entries
                if tid == table_id and row == row_index}

    def __len__(self) -> int:
        return len(self.entries)


class TableCorpus:
    def __init__(self, tables: list[Table]):
        self.tables = tables
        self.by_id = {t.table_id: t for t in tables}

    def __iter__(self) -> Iterator[Table]:
        return iter(self.tables)

    def __len__(self) -> int:
        return len(self.tables)


class PassageCorpus:
    def __init__(self, passages: list[Passage]):
        self.passages = passages
        self.by_id = {p.passage_id: p for p in passages}

    def __iter__(self) -> Iterator[Passage]:
        return iter(self.passages)

    def __len__(self) -> int:
        return len(self.passages)


# ---------------------------------------------------------------------------
# jsonl primitives


def iter_jsonl(path: str | Path) -> Iterator[tuple[int, dict]]:
    """Yield (line_number, record) pairs, skipping blank lines and meta records.

    A meta record is any object carrying a ``_meta`` key; CLI-produced
    artifacts put one on the first line.
    """
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise CorpusError("malformed-record", f"invalid JSON ({e.msg})",
                                  path, lineno) from None
            if not isinstance(rec, dict):
                raise CorpusError("malformed-record", "record is not an object",
                                  path, lineno)
            if "_meta" in rec:
                continue
            yield lineno, rec


def dump_record(rec: dict) -> str:
    return json.dumps(rec, ensure_ascii=False, separators=(", ", ": "))


def write_jsonl(path: str | Path, records: Iterable[dict], meta: dict | None = None) -> int:
    n = 0
    with open(path, "w", encoding="utf-8") as f:
        if meta is not None:
            f.write(dump_record({"_meta": meta}) + "\n")
        for rec in records:
            f.write(dump_record(rec) + "\n")
            n += 1
    return n


def _require(rec: dict, name: str, typ, path, lineno):
    if name not in rec:
        raise CorpusError("missing-field", f"field {name!r} missing", path, lineno)
    value = rec[name]
    if not isinstance(value, typ):
        raise CorpusError("malformed-record",
                          f"field {name!r} has type {type(value).__name__}", path, lineno)
    return value


# ---------------------------------------------------------------------------
# loading


def load_tables(path: str | Path) -> TableCorpus:
    tables: list[Table] = []
    seen: set[str] = set()
    for lineno, rec in iter_jsonl(path):
        table_id = _require(rec, "table_id", str, path, lineno)
        title = _require(rec, "title", str, path, lineno)
        section_title = _require(rec, "section_title", str, path, lineno)
        header = _require(rec, "header", list, path, lineno)
        rows = _require(rec, "rows", list, path, lineno)
        if table_id in seen:
            raise CorpusError("duplicate-id", f"table_id {table_id!r} repeated", path, lineno)
        seen.add(table_id)
        if not header:
            raise CorpusError("empty-header", f"table {table_id!r} has no columns", path, lineno)
        for i, row in enumerate(rows):
            if not isinstance(row, list) or not all(isinstance(c, str) for c in row):
                raise CorpusError("malformed-record",
                                  f"table {table_id!r} row {i} is not a list of strings",
                                  path, lineno)
            if len(row) != len(header):
                raise CorpusError(
                    "row-length-mismatch",
                    f"table {table_id!r} row {i} has {len(row)} cells, header has {len(header)}",
                    path, lineno)
        tables.append(Table(table_id, title, section_title,
                            [str(h) for h in header], [list(r) for r in rows]))
    return TableCorpus(tables)


def load_passages(path: str | Path) -> PassageCorpus:
    passages: list[Passage] = []
    seen: set[str] = set()
    for lineno, rec in iter_jsonl(path):
        passage_id = _require(rec, "passage_id", str, path, lineno)
        title = _require(rec, "title", str, path, lineno)
        text = _require(rec, "text", str, path, lineno)
        if passage_id in seen:
            raise CorpusError("duplicate-id", f"passage_id {passage_id!r} repeated", path, lineno)
        seen.add(passage_id)
        if not normalize_ws(text):
            raise CorpusError("empty-text", f"passage {passage_id!r} has empty text", path, lineno)
        passages.append(Passage(passage_id, title, text))
    return PassageCorpus(passages)


def load_links(path: str | Path, tables: TableCorpus, passages: PassageCorpus) -> LinkMap:
    entries: dict[tuple[str, int, int], list[str]] = {}
    for lineno, rec in iter_jsonl(path):
        table_id = _require(rec, "table_id", str, path, lineno)
        row_index = _require(rec, "row_index", int, path, lineno)
        cell_index = _require(rec, "cell_index", int, path, lineno)
        passage_ids = _require(rec, "passage_ids", list, path, lineno)
        table = tables.by_id.get(table_id)
        if table is None:
            raise CorpusError("dangling-table", f"link references unknown table {table_id!r}",
                              path, lineno)
        if not 0 <= row_index < len(table.rows):
            raise CorpusError("index-out-of-range",
                              f"row_index {row_index} outside table {table_id!r}", path, lineno)
        if not 0 <= cell_index < len(table.header):
            raise CorpusError("index-out-of-range",
                              f"cell_index {cell_index} outside table {table_id!r}", path, lineno)
        for pid in passage_ids:
            if pid not in passages.by_id:
                raise CorpusError("dangling-passage",
                                  f"link references unknown passage {pid!r}", path, lineno)
        key = (table_id, row_index, cell_index)
        entries.setdefault(key, []).extend(passage_ids)
    return LinkMap(entries)


def load_corpus(tables_path: str | Path, passages_path: str | Path,
                links_path: str | Path) -> tuple[TableCorpus, PassageCorpus, LinkMap]:
    """Load and validate the three knowledge-source files."""
    tables = load_tables(tables_path)
    passages = load_passages(passages_path)
    links = load_links(links_path, tables, passages)
    logger.info("loaded %d tables, %d passages, %d link entries",
                len(tables), len(passages), len(links))
    return tables, passages, links


def load_questions(path: str | Path, tables: TableCorpus | None = None) -> list[Question]:
    questions: list[Question] = []
    seen: set[str] = set()
    for lineno, rec in iter_jsonl(path):
        question_id = _require(rec, "question_id", str, path, lineno)
        text = _require(rec, "text", str, path, lineno)
        answer = _require(rec, "answer", str, path, lineno)
        gold_table_id = _require(rec, "gold_table_id", str, path, lineno)
        split = _require(rec, "split", str, path, lineno)
        gold_row_index = rec.get("gold_row_index")
        if gold_row_index is not None and not isinstance(gold_row_index, int):
            raise CorpusError("malformed-record", "gold_row_index must be an integer",
                              path, lineno)
        if question_id in seen:
            raise CorpusError("duplicate-id", f"question_id {question_id!r} repeated",
                              path, lineno)
        seen.add(question_id)
        if split not in SPLITS:
            raise CorpusError("bad-split", f"split {split!r} not in {SPLITS}", path, lineno)
        if split in ("train", "dev") and not answer.strip():
            raise CorpusError("empty-answer",
                              f"question {question_id!r} ({split}) has empty answer",
                              path, lineno)
        if tables is not None and gold_table_id not in tables.by_id:
            raise CorpusError("dangling-table",
                              f"question {question_id!r} references unknown table "
                              f"{gold_table_id!r}", path, lineno)
        questions.append(Question(question_id, text, answer, gold_table_id, split,
                                  gold_row_index))
    return questions


# ---------------------------------------------------------------------------
# canonical serialization (field order fixed; round-trips byte-identical)


def table_record(t: Table) -> dict:
    return {"table_id": t.table_id, "title": t.title, "section_title": t.section_title,
            "header": t.header, "rows": t.rows}


def passage_record(p: Passage) -> dict:
    return {"passage_id": p.passage_id, "title": p.title, "text": p.text}


def link_records(links: LinkMap) -> list[dict]:
    return [{"table_id": tid, "row_index": row, "cell_index": cell, "passage_ids": pids}
            for (tid, row, cell), pids in sorted(links.entries.items())]


def question_record(q: Question) -> dict:
    rec = {"question_id": q.question_id, "text": q.text, "answer": q.answer,
           "gold_table_id": q.gold_table_id}
    if q.gold_row_index is not None:
        rec["gold_row_index"] = q.gold_row_index
    rec["split"] = q.split
    return rec


# ---------------------------------------------------------------------------
# statistics


def round1(value: Fraction) -> float:
    """Round an exact rational to 1 decimal, half away from zero."""
    scaled = value * 10
    if scaled >= 0:
        n = (scaled + Fraction(1, 2)).__floor__()
    else:
        n = -((-scaled + Fraction(1, 2)).__floor__())
    return n / 10


@dataclass(frozen=True)
class CorpusStats:
    table_count: int
    passage_count: int
    block_count: int
    mean_tokens_per_block: float
    mean_blocks_per_table: float

    def as_dict(self) -> dict:
        return {"table_count": self.table_count, "passage_count": self.passage_count,
                "block_count": self.block_count,
                "mean_tokens_per_block": self.mean_tokens_per_block,
                "mean_blocks_per_table": self.mean_blocks_per_table}


def corpus_stats(tables: TableCorpus, passages: PassageCorpus,
                 block_token_counts: list[int] | None = None) -> CorpusStats:
    """Deterministic corpus counts; means are exact rationals rounded to 1 decimal.

    ``block_token_counts`` are the untruncated flattened lengths; pass None
    when blocks have not been built (block stats report as zero).
    """
    counts = block_token_counts or []
    n_blocks = len(counts)
    mean_tokens = round1(Fraction(sum(counts), n_blocks)) if n_blocks else 0.0
    mean_blocks = round1(Fraction(n_blocks, len(tables))) if len(tables) else 0.0
    return CorpusStats(len(tables), len(passages), n_blocks, mean_tokens, mean_blocks)
