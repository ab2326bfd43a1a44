"""Hard negative construction for contrastive training.

Three strategies:

* mmhn: substitute exactly one modality region of the positive, chosen by
  where the answer lives: answer in the table side swaps the row (same
  table, answer-free row), answer in the passage side swaps the passages
  (borrowed from another block). A block whose answer sits in both regions
  admits no answer-free single-region swap, so it falls back to a random
  block from another table, flagged.
* bm25: the highest-BM25 block for the question that is answer-free and
  outside the gold table entirely.
* random: a uniform answer-free block from the positive's own table, with
  the same flagged other-table fallback when the table offers none.

Every produced negative is answer-free under normalized containment, never
equal to the positive, and a pure function of (inputs, seed).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .blocks import (TableTextBlock, block_from_record, block_id_for, block_record,
                     passage_region_text, table_region_text)
from .bm25 import SparseIndex, score_all
from .corpus import CorpusError, Question, TableCorpus
from .tokenizer import normalize_answer

ANSWER_IN_TABLE = "table"
ANSWER_IN_PASSAGES = "passages"
ANSWER_BOTH = "both"
ANSWER_ABSENT = "absent"

STRATEGIES = ("mmhn", "bm25", "random")


def _contains(text: str, answer: str) -> bool:
    return normalize_answer(answer) in normalize_answer(text)


def locate_answer(block: TableTextBlock, answer: str) -> str:
    """Which modality region holds the answer, under normalized containment."""
    if not answer.strip():
        raise ValueError("answer must be non-empty")
    in_table = _contains(table_region_text(block), answer)
    in_text = _contains(passage_region_text(block), answer)
    if in_table and in_text:
        return ANSWER_BOTH
    if in_table:
        return ANSWER_IN_TABLE
    if in_text:
        return ANSWER_IN_PASSAGES
    return ANSWER_ABSENT


def block_contains_answer(block: TableTextBlock, answer: str) -> bool:
    return locate_answer(block, answer) != ANSWER_ABSENT


def synthetic_id(positive_id: str, counter: int) -> str:
    """Ids for constructed negatives; '#' never appears in corpus block ids."""
    return f"{positive_id}#neg{counter}"


@dataclass(frozen=True)
class TrainInstance:
    question_id: str
    positive_block_id: str
    negative: TableTextBlock
    strategy: str
    fallback: bool = False
    question_text: str | None = None


# ---------------------------------------------------------------------------
# strategies


def _swap_row(positive: TableTextBlock, tables: TableCorpus, answer: str,
              rng: np.random.Generator, counter: int) -> TableTextBlock | None:
    """Same passages, a different answer-free row of the same table."""
    table = tables.by_id.get(positive.table_id)
    if table is None:
        raise CorpusError("dangling-table",
                          f"block {positive.block_id!r} references unknown table")
    own = table_region_text(positive)
    eligible = []
    for k, row in enumerate(table.rows):
        if k == positive.row_index:
            continue
        cand = replace(positive, row=list(row), row_index=k)
        region = table_region_text(cand)
        if region != own and not _contains(region, answer):
            eligible.append((k, cand))
    if not eligible:
        return None
    k, cand = eligible[int(rng.integers(len(eligible)))]
    return replace(cand, block_id=synthetic_id(positive.block_id, counter))


def _swap_passages(positive: TableTextBlock, blocks: dict[str, TableTextBlock],
                   answer: str, rng: np.random.Generator,
                   counter: int) -> TableTextBlock | None:
    """Same row, the passage set of another answer-free block."""
    own = passage_region_text(positive)
    eligible = []
    for bid in sorted(blocks):
        if bid == positive.block_id:
            continue
        donor = passage_region_text(blocks[bid])
        if donor != own and not _contains(donor, answer):
            eligible.append(bid)
    if not eligible:
        return None
    donor = blocks[eligible[int(rng.integers(len(eligible)))]]
    return replace(positive, passages=list(donor.passages),
                   block_id=synthetic_id(positive.block_id, counter))


def _other_table_block(positive: TableTextBlock, blocks: dict[str, TableTextBlock],
                       answer: str | None, rng: np.random.Generator) -> TableTextBlock:
    eligible = [bid for bid in sorted(blocks)
                if blocks[bid].table_id != positive.table_id
                and (answer is None or not block_contains_answer(blocks[bid], answer))]
    if not eligible:
        raise ValueError(
            f"no answer-free block outside table {positive.table_id!r} to use "
            f"as a negative for {positive.block_id!r}")
    return blocks[eligible[int(rng.integers(len(eligible)))]]


def mmhn(positive: TableTextBlock, answer: str, tables: TableCorpus,
         blocks: dict[str, TableTextBlock], rng: np.random.Generator,
         counter: int = 0) -> tuple[TableTextBlock, bool]:
    """Mixed-modality negative; returns (block, fell_back_to_random)."""
    loc = locate_answer(positive, answer)
    if loc == ANSWER_ABSENT:
        raise ValueError(
            f"answer not present in positive block {positive.block_id!r}")
    negative = None
    if loc == ANSWER_IN_TABLE:
        negative = _swap_row(positive, tables, answer, rng, counter)
    elif loc == ANSWER_IN_PASSAGES:
        negative = _swap_passages(positive, blocks, answer, rng, counter)
    # ANSWER_BOTH: the untouched region would keep the answer, so no
    # single-region swap can be answer-free; only the fallback remains.
    if negative is not None:
        return negative, False
    return _other_table_block(positive, blocks, answer, rng), True


def random_negative(positive: TableTextBlock, blocks: dict[str, TableTextBlock],
                    answer: str | None, rng: np.random.Generator
                    ) -> tuple[TableTextBlock, bool]:
    """Uniform answer-free same-table block; other-table fallback when none."""
    eligible = [bid for bid in sorted(blocks)
                if blocks[bid].table_id == positive.table_id
                and bid != positive.block_id
                and (answer is None or not block_contains_answer(blocks[bid], answer))]
    if eligible:
        return blocks[eligible[int(rng.integers(len(eligible)))]], False
    return _other_table_block(positive, blocks, answer, rng), True


def bm25_negative(question_text: str, answer: str, gold_table_id: str,
                  index: SparseIndex, blocks: dict[str, TableTextBlock]
                  ) -> TableTextBlock:
    """Highest-scoring answer-free block outside the gold table."""
    if index.n_docs == 0:
        raise ValueError("sparse index is empty")
    scores = score_all(index, question_text)
    for bid, _ in sorted(scores.items(), key=lambda item: (-item[1], item[0])):
        block = blocks.get(bid)
        if block is None:
            raise CorpusError("dangling-table",
                              f"indexed id {bid!r} missing from block corpus")
        if block.table_id == gold_table_id:
            continue
        if not block_contains_answer(block, answer):
            return block
    raise ValueError(
        f"no answer-free block outside table {gold_table_id!r} shares a term "
        f"with the question")


# ---------------------------------------------------------------------------
# instance assembly


def positive_for(question: Question, blocks: dict[str, TableTextBlock]
                 ) -> TableTextBlock | None:
    """The gold block: the annotated row when given, else the lowest-index
    gold-table row containing the answer."""
    if question.gold_row_index is not None:
        return blocks.get(block_id_for(question.gold_table_id, question.gold_row_index))
    candidates = sorted(
        (b for b in blocks.values() if b.table_id == question.gold_table_id),
        key=lambda b: b.row_index)
    for block in candidates:
        if block_contains_answer(block, question.answer):
            return block
    return None


def make_instances(questions: list[Question], tables: TableCorpus,
                   blocks: dict[str, TableTextBlock], strategy: str, seed: int,
                   sparse: SparseIndex | None = None
                   ) -> tuple[list[TrainInstance], int]:
    """One instance per usable question; returns (instances, skipped count).

    Skipped questions have an empty answer (hidden-label splits), lack a
    resolvable positive or (for mmhn) a locatable answer. The rng is consumed
    in question order, so outputs are stable for a fixed file and seed.
    """
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown negative strategy {strategy!r}")
    if strategy == "bm25" and sparse is None:
        raise ValueError("bm25 strategy requires a sparse index over the blocks")
    rng = np.random.default_rng(seed)
    instances: list[TrainInstance] = []
    skipped = 0
    for i, question in enumerate(questions):
        if not normalize_answer(question.answer):
            skipped += 1
            continue
        positive = positive_for(question, blocks)
        if positive is None:
            skipped += 1
            continue
        fallback = False
        if strategy == "mmhn":
            if locate_answer(positive, question.answer) == ANSWER_ABSENT:
                skipped += 1
                continue
            negative, fallback = mmhn(positive, question.answer, tables, blocks,
                                      rng, counter=i)
        elif strategy == "random":
            negative, fallback = random_negative(positive, blocks, question.answer, rng)
        else:
            negative = bm25_negative(question.text, question.answer,
                                     question.gold_table_id, sparse, blocks)
        if negative.block_id == positive.block_id:
            raise ValueError(f"negative equals positive for {question.question_id!r}")
        instances.append(TrainInstance(question.question_id, positive.block_id,
                                       negative, strategy, fallback))
    return instances, skipped


# ---------------------------------------------------------------------------
# serialization


def instance_record(inst: TrainInstance) -> dict:
    rec = {"question_id": inst.question_id,
           "positive_block_id": inst.positive_block_id,
           "strategy": inst.strategy,
           "fallback": inst.fallback,
           "negative": block_record(inst.negative)}
    if inst.question_text is not None:
        rec["question_text"] = inst.question_text
    return rec


def instance_from_record(rec: dict) -> TrainInstance:
    return TrainInstance(rec["question_id"], rec["positive_block_id"],
                         block_from_record(rec["negative"]), rec["strategy"],
                         bool(rec.get("fallback", False)),
                         rec.get("question_text"))
