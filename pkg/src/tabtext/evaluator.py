"""Retrieval metrics: table recall@k, block recall@k and a token-budget hit rate.

A question scores a table hit at k when any of its top-k blocks comes from the
gold table, and a block hit when such a block also contains the normalized
answer string. The budget hit concatenates flattened block texts in rank
order, truncates the last block at the token budget (4096 by default) and
tests answer containment on that prefix, so an answer straddling the cut is a
miss.

Questions whose gold table contributes no blocks to the corpus cannot be hit
at any k; they are excluded from the means and reported as a separate count
instead of silently deflating recall.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .blocks import FlattenedBlock, TableTextBlock
from .corpus import Question, iter_jsonl, write_jsonl
from .tokenizer import TokenizerContract, WHITESPACE, normalize_answer

KS_DEFAULT = (1, 10, 20, 50, 100)
HIT_BUDGET = 4096


@dataclass
class RetrievalRun:
    results: dict[str, list[tuple[str, float]]]   # qid -> ranked (block_id, score)
    retriever: str = ""
    timestamp: str = ""


def validate_run(run: RetrievalRun) -> None:
    """Enforce unique ids and strict (score desc, id asc) ordering per question."""
    for qid, ranked in run.results.items():
        ids = [bid for bid, _ in ranked]
        if len(set(ids)) != len(ids):
            raise ValueError(f"run for question {qid!r} repeats a block id")
        for (id_a, s_a), (id_b, s_b) in zip(ranked, ranked[1:]):
            if s_a < s_b or (s_a == s_b and id_a >= id_b):
                raise ValueError(
                    f"run for question {qid!r} is not ordered by "
                    f"(score desc, id asc) at {id_a!r}/{id_b!r}")


@dataclass(frozen=True)
class QuestionOutcome:
    table_rank: int | None       # 1-based rank of the first gold-table block
    block_rank: int | None       # first gold-table block that contains the answer
    hit: bool                    # answer within the budgeted concatenation


@dataclass
class EvalReport:
    ks: list[int]
    table_recall: dict[int, float]
    block_recall: dict[int, float]
    hit: float
    budget: int
    tokenizer: str
    retriever: str
    n_questions: int
    n_excluded: int
    per_question: dict[str, QuestionOutcome] = field(default_factory=dict)


# ---------------------------------------------------------------------------
# per-question outcomes


def _ranks(ranked: Sequence[tuple[str, float]], question: Question,
           blocks: dict[str, TableTextBlock], flats: dict[str, FlattenedBlock]
           ) -> tuple[int | None, int | None]:
    answer = normalize_answer(question.answer)
    table_rank = block_rank = None
    for rank, (bid, _) in enumerate(ranked, start=1):
        block = blocks.get(bid)
        if block is None:
            raise ValueError(f"run references unknown block {bid!r}")
        if block.table_id != question.gold_table_id:
            continue
        if table_rank is None:
            table_rank = rank
        if answer and answer in normalize_answer(flats[bid].text):
            block_rank = rank
            break
    return table_rank, block_rank


def _budget_hit(ranked: Sequence[tuple[str, float]], question: Question,
                flats: dict[str, FlattenedBlock], budget: int,
                tokenizer: TokenizerContract) -> bool:
    answer = normalize_answer(question.answer)
    if not answer:
        return False
    taken: list[str] = []
    remaining = budget
    for bid, _ in ranked:
        flat = flats.get(bid)
        if flat is None:
            raise ValueError(f"run references unknown block {bid!r}")
        tokens = tokenizer.tokenize(flat.text)
        taken.extend(tokens[:remaining])
        remaining -= min(len(tokens), remaining)
        if remaining <= 0:
            break
    return answer in normalize_answer(" ".join(taken))


def eligible_questions(questions: Sequence[Question],
                       blocks: dict[str, TableTextBlock]
                       ) -> tuple[list[Question], int]:
    tables_present = {b.table_id for b in blocks.values()}
    eligible = [q for q in questions if q.gold_table_id in tables_present]
    return eligible, len(questions) - len(eligible)


def question_outcomes(run: RetrievalRun, questions: Sequence[Question],
                      blocks: dict[str, TableTextBlock],
                      flats: dict[str, FlattenedBlock],
                      budget: int = HIT_BUDGET,
                      tokenizer: TokenizerContract = WHITESPACE
                      ) -> dict[str, QuestionOutcome]:
    outcomes = {}
    for question in questions:
        ranked = run.results.get(question.question_id)
        if ranked is None:
            raise ValueError(f"run is missing question {question.question_id!r}")
        table_rank, block_rank = _ranks(ranked, question, blocks, flats)
        hit = _budget_hit(ranked, question, flats, budget, tokenizer)
        outcomes[question.question_id] = QuestionOutcome(table_rank, block_rank, hit)
    return outcomes


def _recall_at(outcomes: dict[str, QuestionOutcome], ks: Sequence[int],
               attr: str) -> dict[int, float]:
    n = len(outcomes)
    values = {}
    for k in ks:
        hits = sum(1 for o in outcomes.values()
                   if getattr(o, attr) is not None and getattr(o, attr) <= k)
        values[k] = hits / n if n else 0.0
    return values


# ---------------------------------------------------------------------------
# metric entry points


def table_recall(run: RetrievalRun, questions: Sequence[Question],
                 blocks: dict[str, TableTextBlock],
                 flats: dict[str, FlattenedBlock],
                 ks: Sequence[int] = KS_DEFAULT) -> dict[int, float]:
    eligible, _ = eligible_questions(questions, blocks)
    outcomes = question_outcomes(run, eligible, blocks, flats)
    return _recall_at(outcomes, ks, "table_rank")


def block_recall(run: RetrievalRun, questions: Sequence[Question],
                 blocks: dict[str, TableTextBlock],
                 flats: dict[str, FlattenedBlock],
                 ks: Sequence[int] = KS_DEFAULT) -> dict[int, float]:
    eligible, _ = eligible_questions(questions, blocks)
    outcomes = question_outcomes(run, eligible, blocks, flats)
    return _recall_at(outcomes, ks, "block_rank")


def hit_at_budget(run: RetrievalRun, questions: Sequence[Question],
                  blocks: dict[str, TableTextBlock],
                  flats: dict[str, FlattenedBlock], budget: int = HIT_BUDGET,
                  tokenizer: TokenizerContract = WHITESPACE) -> float:
    eligible, _ = eligible_questions(questions, blocks)
    outcomes = question_outcomes(run, eligible, blocks, flats, budget, tokenizer)
    n = len(outcomes)
    return sum(o.hit for o in outcomes.values()) / n if n else 0.0


def evaluate(run: RetrievalRun, questions: Sequence[Question],
             blocks: dict[str, TableTextBlock],
             flats: dict[str, FlattenedBlock], ks: Sequence[int] = KS_DEFAULT,
             budget: int = HIT_BUDGET,
             tokenizer: TokenizerContract = WHITESPACE) -> EvalReport:
    """All metrics in one pass over the run."""
    ks = sorted(set(int(k) for k in ks))
    eligible, excluded = eligible_questions(questions, blocks)
    outcomes = question_outcomes(run, eligible, blocks, flats, budget, tokenizer)
    n = len(outcomes)
    return EvalReport(
        ks=list(ks),
        table_recall=_recall_at(outcomes, ks, "table_rank"),
        block_recall=_recall_at(outcomes, ks, "block_rank"),
        hit=sum(o.hit for o in outcomes.values()) / n if n else 0.0,
        budget=budget,
        tokenizer=tokenizer.name,
        retriever=run.retriever,
        n_questions=n,
        n_excluded=excluded,
        per_question=outcomes,
    )


def sweep(run: RetrievalRun, questions: Sequence[Question],
          blocks: dict[str, TableTextBlock], flats: dict[str, FlattenedBlock],
          ks: Sequence[int] = KS_DEFAULT) -> list[tuple[int, float, float]]:
    """(k, table recall, block recall) rows for the recall-vs-k curve."""
    ks = sorted(set(int(k) for k in ks))
    eligible, _ = eligible_questions(questions, blocks)
    outcomes = question_outcomes(run, eligible, blocks, flats)
    table = _recall_at(outcomes, ks, "table_rank")
    block = _recall_at(outcomes, ks, "block_rank")
    return [(k, table[k], block[k]) for k in ks]


# ---------------------------------------------------------------------------
# file formats


def write_run(path: str | Path, run: RetrievalRun, meta: dict | None = None) -> None:
    validate_run(run)
    header = dict(meta or {})
    header.setdefault("retriever", run.retriever)
    header.setdefault("timestamp", run.timestamp)
    records = ({"question_id": qid,
                "block_ids": [bid for bid, _ in ranked],
                "scores": [float(s) for _, s in ranked]}
               for qid, ranked in run.results.items())
    write_jsonl(path, records, meta=header)


def load_run(path: str | Path) -> RetrievalRun:
    retriever = timestamp = ""
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            if isinstance(rec, dict) and "_meta" in rec:
                retriever = rec["_meta"].get("retriever", "")
                timestamp = rec["_meta"].get("timestamp", "")
            break
    results: dict[str, list[tuple[str, float]]] = {}
    for lineno, rec in iter_jsonl(path):
        qid = rec["question_id"]
        if qid in results:
            raise ValueError(f"run repeats question {qid!r} (line {lineno})")
        ids, scores = rec["block_ids"], rec["scores"]
        if len(ids) != len(scores):
            raise ValueError(f"run for {qid!r} has {len(ids)} ids but "
                             f"{len(scores)} scores (line {lineno})")
        results[qid] = list(zip(ids, [float(s) for s in scores]))
    run = RetrievalRun(results, retriever, timestamp)
    validate_run(run)
    return run


def report_record(report: EvalReport) -> dict:
    return {
        "ks": report.ks,
        "table_recall": {str(k): v for k, v in report.table_recall.items()},
        "block_recall": {str(k): v for k, v in report.block_recall.items()},
        "hit_at_budget": report.hit,
        "budget": report.budget,
        "tokenizer": report.tokenizer,
        "retriever": report.retriever,
        "n_questions": report.n_questions,
        "n_excluded": report.n_excluded,
        "per_question": {
            qid: {"table_rank": o.table_rank, "block_rank": o.block_rank,
                  "hit": o.hit}
            for qid, o in sorted(report.per_question.items())
        },
    }


def write_report(path: str | Path, report: EvalReport,
                 meta: dict | None = None) -> None:
    """report.json carries no timestamps: seeded reruns must be byte-identical."""
    record = report_record(report)
    if meta:
        record["_meta"] = {k: v for k, v in meta.items() if k != "timestamp"}
    Path(path).write_text(json.dumps(record, sort_keys=True, indent=2,
                                     ensure_ascii=False) + "\n", encoding="utf-8")


def write_curve(path: str | Path, rows: Sequence[tuple[int, float, float]],
                meta: dict | None = None) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for key, value in (meta or {}).items():
            f.write(f"# {key}: {value}\n")
        f.write("k,table_recall,block_recall\n")
        for k, table, block in rows:
            f.write(f"{k},{table!r},{block!r}\n")


def read_curve(path: str | Path) -> list[tuple[int, float, float]]:
    rows = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("#") or line.startswith("k,"):
                continue
            k, table, block = line.split(",")
            rows.append((int(k), float(table), float(block)))
    return rows
