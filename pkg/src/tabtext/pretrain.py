"""Synthetic pretraining pairs: mined blocks plus template or imported questions.

Mining differs from retrieval-corpus construction in two ways: only rows with
at least one entity link produce a block, and each attached passage keeps only
its first section (text up to the first blank line), since lead sections carry
the entity description the templates lean on.

Template questions ("titleq") instantiate

    What is the {column} of {passage title} in {table title}?

with the first passage's title and a uniformly chosen column whose cell is
non-empty and not itself a linked cell. Generated questions arrive as
questions_generated.jsonl from an external model and are validated here, never
trusted: malformed lines are counted and dropped, unknown block ids are errors,
and a coverage ratio (questions mentioning any block surface string) is
reported rather than asserted.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .blocks import BlockPassage, TableTextBlock, block_id_for
from .corpus import CorpusError, LinkMap, PassageCorpus, TableCorpus
from .negatives import TrainInstance, random_negative
from .tokenizer import normalize_answer, normalize_ws

TITLEQ = "titleq"
GENERATED = "generated"

_SECTION_BREAK = re.compile(r"\n\s*\n")


@dataclass(frozen=True)
class PseudoPair:
    block_id: str
    question: str
    provenance: str              # titleq | generated
    source: dict                 # surface fields the question was built from


def first_section(text: str) -> str:
    """Text up to the first blank-line section break; full text when none."""
    return _SECTION_BREAK.split(text, maxsplit=1)[0]


def mine_blocks(tables: TableCorpus, passages: PassageCorpus,
                links: LinkMap) -> list[TableTextBlock]:
    """One block per linked row; passage bodies cut to their first section."""
    blocks = []
    for table in tables:
        for row_index in sorted(links.linked_rows(table.table_id)):
            attached = [
                BlockPassage(pid, passages.by_id[pid].title,
                             first_section(passages.by_id[pid].text))
                for pid in links.passages_for_row(table.table_id, row_index)
            ]
            blocks.append(TableTextBlock(
                block_id=block_id_for(table.table_id, row_index),
                table_id=table.table_id,
                row_index=row_index,
                header=list(table.header),
                row=list(table.rows[row_index]),
                title=table.title,
                section_title=table.section_title,
                passages=attached,
            ))
    return blocks


# ---------------------------------------------------------------------------
# template questions


def titleq(block: TableTextBlock, rng: np.random.Generator,
           linked_cells: set[int] | None = None) -> PseudoPair | None:
    """Template question for one block, or None when the block is ineligible.

    Eligible columns have a non-empty cell and are not linked cells. Without
    link information, a cell matching the first passage's title is treated
    as the linked one.
    """
    if not block.passages:
        return None
    passage_title = block.passages[0].title
    if linked_cells is None:
        linked_cells = {i for i, cell in enumerate(block.row)
                        if normalize_answer(cell) == normalize_answer(passage_title)}
    eligible = [i for i, cell in enumerate(block.row)
                if normalize_ws(cell) and i not in linked_cells]
    if not eligible:
        return None
    c = eligible[int(rng.integers(len(eligible)))]
    question = (f"What is the {normalize_ws(block.header[c])} of "
                f"{normalize_ws(passage_title)} in {normalize_ws(block.title)}?")
    return PseudoPair(block.block_id, question, TITLEQ,
                      {"table_title": block.title, "passage_title": passage_title,
                       "column": block.header[c]})


def make_titleq_pairs(blocks: Sequence[TableTextBlock], links: LinkMap | None,
                      seed: int) -> list[PseudoPair]:
    rng = np.random.default_rng(seed)
    pairs = []
    for block in blocks:
        cells = (links.linked_cells(block.table_id, block.row_index)
                 if links is not None else None)
        pair = titleq(block, rng, cells)
        if pair is not None:
            pairs.append(pair)
    return pairs


# ---------------------------------------------------------------------------
# imported generated questions


def import_generated(path: str | Path, blocks: dict[str, TableTextBlock]
                     ) -> tuple[list[PseudoPair], int]:
    """Validate a generated-questions file; returns (pairs, rejected count).

    Lines that fail to parse or lack a non-empty question are counted and
    dropped; a question pointing at a block the corpus does not contain is
    an error (the file was built against the wrong corpus).
    """
    pairs: list[PseudoPair] = []
    rejected = 0
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError:
                rejected += 1
                continue
            if not isinstance(rec, dict):
                rejected += 1
                continue
            if "_meta" in rec:
                continue
            block_id = rec.get("block_id")
            question = rec.get("question")
            if not isinstance(block_id, str) or not isinstance(question, str) \
                    or not question.strip():
                rejected += 1
                continue
            if block_id not in blocks:
                raise CorpusError("dangling-block",
                                  f"generated question references unknown block "
                                  f"{block_id!r}", path, lineno)
            pairs.append(PseudoPair(block_id, question.strip(), GENERATED, {}))
    return pairs, rejected


def coverage_ratio(pairs: Sequence[PseudoPair],
                   blocks: dict[str, TableTextBlock]) -> float:
    """Fraction of questions mentioning at least one block surface string."""
    if not pairs:
        return 1.0
    hits = 0
    for pair in pairs:
        block = blocks[pair.block_id]
        strings = [block.title, block.section_title, *block.row,
                   *(p.title for p in block.passages)]
        question = normalize_answer(pair.question)
        if any(normalize_answer(s) in question for s in strings if s.strip()):
            hits += 1
    return hits / len(pairs)


# ---------------------------------------------------------------------------
# instances


def pretrain_instances(pairs: Sequence[PseudoPair],
                       blocks: dict[str, TableTextBlock],
                       seed: int) -> tuple[list[TrainInstance], int]:
    """Pair each pseudo-question with a random same-table hard negative.

    No answer constrains the negative here; any other row of the table (or
    the flagged other-table fallback) serves.
    """
    rng = np.random.default_rng(seed)
    instances = []
    fallbacks = 0
    for i, pair in enumerate(pairs):
        positive = blocks.get(pair.block_id)
        if positive is None:
            raise CorpusError("dangling-block",
                              f"pair references unknown block {pair.block_id!r}")
        negative, fell_back = random_negative(positive, blocks, None, rng)
        fallbacks += fell_back
        instances.append(TrainInstance(f"pre-{i:06d}", pair.block_id, negative,
                                       "random", fell_back, pair.question))
    return instances, fallbacks


# ---------------------------------------------------------------------------
# serialization


def pair_record(pair: PseudoPair) -> dict:
    return {"block_id": pair.block_id, "question": pair.question,
            "provenance": pair.provenance, "source": pair.source}


def pair_from_record(rec: dict) -> PseudoPair:
    return PseudoPair(rec["block_id"], rec["question"], rec["provenance"],
                      dict(rec.get("source", {})))
