"""Back-generate questions for table-text blocks.

A real deployment would put a fine-tuned seq2seq model here. This module
ships a deterministic template decoder with the same interface: a bank of
question templates filled from block fields, a checkpoint of learned weights
(which templates and which columns oracle questions actually use), and
beam-style candidate selection under a length cap. The output file matches
the main toolkit's generated-questions schema: an optional leading _meta
record, then one {"block_id", "question"} object per line.
"""

from __future__ import annotations

import json
import os
import re
import tempfile
from dataclasses import dataclass
from pathlib import Path

GENERATOR_VERSION = "template-v1"
DEFAULT_BEAM_SIZE = 4          # candidates weighed per block
DEFAULT_MAX_LENGTH = 30        # whitespace tokens per question

_PUNCT = re.compile(r"[^\w\s]")

TEMPLATES = (
    ("what-of", "What is the {column} of {anchor} in {title}?"),
    ("which-has", "Which entry in {title} has {column} {value}?"),
    ("in-table", "In {title}, what is the {column} for {anchor}?"),
)


def _norm(text: str) -> str:
    return _PUNCT.sub(" ", text.lower()).strip()


def _clean(text: str) -> str:
    return " ".join(text.split())


def read_jsonl(path: str | Path) -> list[dict]:
    records = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            if not isinstance(rec, dict):
                raise ValueError(f"{path}:{lineno}: record is not an object")
            if "_meta" in rec:
                continue
            records.append(rec)
    return records


def _atomic_write_text(path: str | Path, text: str) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        os.unlink(tmp)
        raise


# ---------------------------------------------------------------------------
# fine-tuning (best effort: counts template shapes and column mentions)


def finetune_generator(pairs_file: str | Path, blocks_file: str | Path,
                       checkpoint: str | Path) -> dict:
    """Fit template and column weights to oracle (question, block) pairs.

    Pairs records need "block_id" and "question"; blocks supply headers. A
    question starting with "which" votes for the which-has template, one
    containing " in " mid-sentence for in-table, anything else for what-of.
    Column votes count header names mentioned in oracle questions.
    """
    blocks = {rec["block_id"]: rec for rec in read_jsonl(blocks_file)}
    template_votes = {name: 1 for name, _ in TEMPLATES}   # add-one smoothing
    column_votes: dict[str, int] = {}
    pairs_seen = 0
    for rec in read_jsonl(pairs_file):
        block_id, question = rec.get("block_id"), rec.get("question")
        if not isinstance(block_id, str) or not isinstance(question, str):
            continue
        q = _norm(question)
        if not q or block_id not in blocks:
            continue
        pairs_seen += 1
        if q.startswith("which"):
            template_votes["which-has"] += 1
        elif " in " in q and not q.startswith("what is the"):
            template_votes["in-table"] += 1
        else:
            template_votes["what-of"] += 1
        for header in blocks[block_id].get("header", []):
            name = _norm(str(header))
            if name and name in q:
                column_votes[name] = column_votes.get(name, 0) + 1
    state = {"generator": GENERATOR_VERSION,
             "template_weights": template_votes,
             "column_weights": column_votes,
             "pairs_seen": pairs_seen}
    _atomic_write_text(checkpoint,
                       json.dumps(state, sort_keys=True, indent=2) + "\n")
    return state


def load_checkpoint(path: str | Path | None) -> dict:
    """Checkpoint weights, or uniform defaults when no checkpoint is given."""
    if path is None:
        return {"generator": GENERATOR_VERSION,
                "template_weights": {name: 1 for name, _ in TEMPLATES},
                "column_weights": {}, "pairs_seen": 0}
    state = json.loads(Path(path).read_text(encoding="utf-8"))
    if state.get("generator") != GENERATOR_VERSION:
        raise ValueError(f"checkpoint {path} was written by "
                         f"{state.get('generator')!r}, not {GENERATOR_VERSION}")
    return state


# ---------------------------------------------------------------------------
# decoding


@dataclass(frozen=True)
class Candidate:
    question: str
    template: str
    score: float


def _candidates(block: dict, state: dict, beam_size: int) -> list[Candidate]:
    title = _clean(str(block.get("title", "")))
    row = [str(cell) for cell in block.get("row", [])]
    header = [str(h) for h in block.get("header", [])]
    passages = block.get("passages", [])
    anchor = _clean(str(passages[0].get("title", ""))) if passages else ""
    tweights = state.get("template_weights", {})
    cweights = state.get("column_weights", {})

    columns = []
    for i, cell in enumerate(row):
        cell = _clean(cell)
        if not cell or i >= len(header) or not _clean(header[i]):
            continue
        if anchor and _norm(cell) == _norm(anchor):
            continue               # the linked cell restates the anchor
        columns.append((i, _clean(header[i]), cell))

    out: list[Candidate] = []
    for t_rank, (name, pattern) in enumerate(TEMPLATES):
        needs_anchor = "{anchor}" in pattern
        if needs_anchor and not anchor:
            continue
        if not title:
            continue
        for c_rank, (_, column, value) in enumerate(columns):
            question = pattern.format(column=column, anchor=anchor,
                                      title=title, value=value)
            score = (tweights.get(name, 1)
                     * (1 + cweights.get(_norm(column), 0))
                     / (1 + 0.1 * t_rank + 0.01 * c_rank))
            out.append(Candidate(question, name, score))
    out.sort(key=lambda c: (-c.score, c.template, c.question))
    return out[:max(beam_size, 1)]


def question_for_block(block: dict, state: dict, beam_size: int,
                       max_length: int) -> tuple[Candidate | None, str]:
    """Best candidate under the length cap, or (None, reason)."""
    beam = _candidates(block, state, beam_size)
    if not beam:
        return None, "no template applies (missing title, columns or anchor)"
    kept = [c for c in beam if len(c.question.split()) <= max_length]
    if not kept:
        return None, f"all {len(beam)} candidates exceed max length {max_length}"
    return kept[0], ""


def generate_questions(blocks_file: str | Path, out: str | Path,
                       checkpoint: str | Path | None = None,
                       beam_size: int = DEFAULT_BEAM_SIZE,
                       max_length: int = DEFAULT_MAX_LENGTH) -> dict:
    """Write questions_generated.jsonl for every block in blocks_file.

    One record per block that decodes successfully; failures are skipped and
    returned with their reasons. Returns a summary dict (also embedded in the
    output file's _meta line).
    """
    if beam_size < 1:
        raise ValueError(f"beam size must be >= 1, got {beam_size}")
    if max_length < 8:
        raise ValueError(f"max length must be >= 8 tokens, got {max_length}")
    state = load_checkpoint(checkpoint)
    blocks = read_jsonl(blocks_file)
    lines: list[str] = []
    skipped: list[dict] = []
    for block in blocks:
        block_id = block.get("block_id")
        if not isinstance(block_id, str) or not block_id:
            skipped.append({"block_id": str(block_id), "reason": "missing block_id"})
            continue
        best, reason = question_for_block(block, state, beam_size, max_length)
        if best is None:
            skipped.append({"block_id": block_id, "reason": reason})
            continue
        lines.append(json.dumps({"block_id": block_id, "question": best.question,
                                 "template": best.template}, sort_keys=True))
    summary = {"generator": GENERATOR_VERSION, "beam_size": beam_size,
               "max_length": max_length, "n_blocks": len(blocks),
               "n_questions": len(lines), "n_skipped": len(skipped),
               "skipped": skipped}
    meta = json.dumps({"_meta": {"tool": "tabtext-bridge", **summary}},
                      sort_keys=True)
    _atomic_write_text(out, "\n".join([meta, *lines]) + "\n")
    return summary
