"""Question generation: schema, decoding controls, fine-tuning effects."""

import json

import pytest

from tabtext_bridge.generate import (finetune_generator, generate_questions,
                                     load_checkpoint, question_for_block)

from conftest import BLOCKS, write_jsonl


def read_out(path):
    meta, records = None, []
    for line in open(path, encoding="utf-8"):
        rec = json.loads(line)
        if "_meta" in rec:
            meta = rec["_meta"]
        else:
            records.append(rec)
    return meta, records


def test_one_question_per_block(blocks_file, tmp_path):
    out = tmp_path / "questions.jsonl"
    summary = generate_questions(blocks_file, out)
    meta, records = read_out(out)
    assert summary["n_questions"] == len(records) == len(BLOCKS)
    assert summary["n_skipped"] == 0
    assert [r["block_id"] for r in records] == [b["block_id"] for b in BLOCKS]
    for rec in records:
        assert isinstance(rec["question"], str) and rec["question"].strip()
    assert meta["tool"] == "tabtext-bridge"
    assert meta["n_blocks"] == len(BLOCKS)


def read_out_after(blocks_file, tmp_path, **kwargs):
    out = tmp_path / "questions.jsonl"
    generate_questions(blocks_file, out, **kwargs)
    return read_out(out)


def test_questions_quote_block_content(blocks_file, tmp_path):
    _, records = read_out_after(blocks_file, tmp_path)
    by_id = {b["block_id"]: b for b in BLOCKS}
    for rec in records:
        assert by_id[rec["block_id"]]["title"] in rec["question"]


def test_empty_blocks_file_yields_no_questions(tmp_path):
    blocks = write_jsonl(tmp_path / "blocks.jsonl", [], meta={"tool": "fixture"})
    out = tmp_path / "questions.jsonl"
    summary = generate_questions(blocks, out)
    meta, records = read_out(out)
    assert records == []
    assert summary["n_questions"] == 0 and meta["n_blocks"] == 0


def test_same_input_same_bytes(blocks_file, tmp_path):
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    generate_questions(blocks_file, a)
    generate_questions(blocks_file, b)
    assert a.read_bytes() == b.read_bytes()


def test_max_length_prefers_short_candidates(blocks_file, tmp_path):
    # 8 tokens fits "Which entry in ..." but not "What is the ... of ... in ...?"
    _, records = read_out_after(blocks_file, tmp_path, max_length=8)
    assert all(len(r["question"].split()) <= 8 for r in records)
    assert records[0]["template"] == "which-has"


def test_block_exceeding_max_length_is_skipped_with_reason(tmp_path):
    block = dict(BLOCKS[2])
    block["title"] = "An Extremely Long Table Title That No Short Question Fits"
    blocks = write_jsonl(tmp_path / "blocks.jsonl", [block])
    summary = generate_questions(blocks, tmp_path / "q.jsonl", max_length=8)
    assert summary["n_questions"] == 0
    assert summary["skipped"][0]["block_id"] == block["block_id"]
    assert "exceed max length 8" in summary["skipped"][0]["reason"]


def test_beam_size_one_keeps_only_top_candidate(blocks_file, tmp_path):
    # with one beam the long what-of candidate is the whole beam, so the
    # length cap that a wider beam would survive becomes a skip
    summary = generate_questions(blocks_file, tmp_path / "q.jsonl",
                                 beam_size=1, max_length=8)
    wide = generate_questions(blocks_file, tmp_path / "q2.jsonl",
                              beam_size=4, max_length=8)
    assert summary["n_skipped"] > wide["n_skipped"]


def test_block_without_title_is_skipped(tmp_path):
    block = dict(BLOCKS[0], title="")
    blocks = write_jsonl(tmp_path / "blocks.jsonl", [block])
    summary = generate_questions(blocks, tmp_path / "q.jsonl")
    assert summary["n_questions"] == 0
    assert "no template applies" in summary["skipped"][0]["reason"]


def test_missing_block_id_is_skipped(tmp_path):
    blocks = write_jsonl(tmp_path / "blocks.jsonl",
                         [{"title": "T", "header": ["A"], "row": ["1"],
                           "passages": []}])
    summary = generate_questions(blocks, tmp_path / "q.jsonl")
    assert summary["skipped"][0]["reason"] == "missing block_id"


def test_finetune_shifts_template_choice(blocks_file, pairs_file, tmp_path):
    ckpt = tmp_path / "gen.ckpt.json"
    state = finetune_generator(pairs_file, blocks_file, ckpt)
    assert state["pairs_seen"] == 3
    assert state["template_weights"]["which-has"] > state["template_weights"]["what-of"]
    assert state["column_weights"]["year"] >= 2

    _, default_records = read_out_after(blocks_file, tmp_path)
    out2 = tmp_path / "tuned.jsonl"
    generate_questions(blocks_file, out2, checkpoint=ckpt)
    _, tuned_records = read_out(out2)
    assert default_records[0]["template"] == "what-of"
    assert all(r["template"] == "which-has" for r in tuned_records)


def test_checkpoint_round_trip_and_version_guard(blocks_file, pairs_file, tmp_path):
    ckpt = tmp_path / "gen.ckpt.json"
    state = finetune_generator(pairs_file, blocks_file, ckpt)
    assert load_checkpoint(ckpt) == state
    bad = tmp_path / "bad.ckpt.json"
    bad.write_text('{"generator": "gpt-99"}')
    with pytest.raises(ValueError, match="was written by 'gpt-99'"):
        load_checkpoint(bad)


def test_decoder_flag_validation(blocks_file, tmp_path):
    with pytest.raises(ValueError, match="beam size must be >= 1"):
        generate_questions(blocks_file, tmp_path / "q.jsonl", beam_size=0)
    with pytest.raises(ValueError, match="max length must be >= 8"):
        generate_questions(blocks_file, tmp_path / "q.jsonl", max_length=5)


def test_question_for_block_reports_reason():
    best, reason = question_for_block({"block_id": "x", "title": "", "header": [],
                                       "row": [], "passages": []},
                                      load_checkpoint(None), 4, 30)
    assert best is None and "no template applies" in reason
