"""Corpus loading, validation and serialization."""

import json
from fractions import Fraction

import pytest

from conftest import tiny_links, tiny_passages, tiny_questions, tiny_tables, write_world
from tabtext.corpus import (
    CorpusError,
    LinkMap,
    Passage,
    PassageCorpus,
    Table,
    TableCorpus,
    corpus_stats,
    dump_record,
    iter_jsonl,
    link_records,
    load_corpus,
    load_links,
    load_passages,
    load_questions,
    load_tables,
    question_record,
    round1,
    table_record,
    write_jsonl,
)


@pytest.fixture()
def world_paths(tmp_path):
    return write_world(tmp_path, tiny_tables(), tiny_passages(), tiny_links(), tiny_questions())


def test_round_trip_through_files(world_paths):
    tables, passages, links = load_corpus(
        world_paths["tables"], world_paths["passages"], world_paths["links"]
    )
    questions = load_questions(world_paths["questions"], tables)
    assert [t.table_id for t in tables] == ["speed", "opera", "bridge"]
    assert tables.by_id["opera"].rows[2] == ["Der Roland von Berlin", "Ruggero Leoncavallo"]
    assert passages.by_id["p-forth"].title == "Forth Bridge"
    assert links.passages_for_row("opera", 0) == ["p-salome", "p-strauss"]
    assert [q.question_id for q in questions] == [q.question_id for q in tiny_questions()]
    assert questions[0].gold_row_index == 0
    assert questions[3].gold_row_index is None


def test_iter_jsonl_skips_blanks_and_meta(tmp_path):
    path = tmp_path / "rows.jsonl"
    path.write_text('{"_meta": {"note": "x"}}\n\n{"a": 1}\n   \n{"a": 2}\n')
    rows = list(iter_jsonl(path))
    assert [rec for _, rec in rows] == [{"a": 1}, {"a": 2}]
    assert [line for line, _ in rows] == [3, 5]


def test_iter_jsonl_reports_bad_line(tmp_path):
    path = tmp_path / "rows.jsonl"
    path.write_text('{"a": 1}\nnot json\n')
    with pytest.raises(CorpusError) as err:
        list(iter_jsonl(path))
    assert err.value.line == 2


def test_duplicate_table_id_rejected(tmp_path):
    path = tmp_path / "tables.jsonl"
    rec = table_record(tiny_tables().tables[0])
    write_jsonl(path, [rec, rec])
    with pytest.raises(CorpusError):
        load_tables(path)


def test_ragged_row_rejected(tmp_path):
    path = tmp_path / "tables.jsonl"
    rec = table_record(Table("t", "T", "S", ["a", "b"], [["1", "2"]]))
    rec["rows"] = [["1"]]
    write_jsonl(path, [rec])
    with pytest.raises(CorpusError):
        load_tables(path)


def test_dangling_link_rejected(tmp_path, world_paths):
    bad = tmp_path / "links_bad.jsonl"
    write_jsonl(bad, link_records(tiny_links()) + [
        {"table_id": "nope", "row_index": 0, "cell_index": 0, "passage_id": "p-forth"}
    ])
    tables = load_tables(world_paths["tables"])
    passages = load_passages(world_paths["passages"])
    with pytest.raises(CorpusError):
        load_links(bad, tables, passages)


def test_link_row_out_of_range_rejected(tmp_path, world_paths):
    bad = tmp_path / "links_bad.jsonl"
    write_jsonl(bad, [{"table_id": "bridge", "row_index": 5, "cell_index": 0,
                       "passage_id": "p-forth"}])
    tables = load_tables(world_paths["tables"])
    passages = load_passages(world_paths["passages"])
    with pytest.raises(CorpusError):
        load_links(bad, tables, passages)


@pytest.mark.parametrize("split", ["train", "dev"])
def test_empty_answer_rejected_outside_test_split(tmp_path, split):
    path = tmp_path / "questions.jsonl"
    rec = question_record(tiny_questions()[0])
    rec["answer"] = "   "
    rec["split"] = split
    write_jsonl(path, [rec])
    with pytest.raises(CorpusError):
        load_questions(path)


def test_empty_answer_allowed_in_test_split(tmp_path):
    path = tmp_path / "questions.jsonl"
    rec = question_record(tiny_questions()[0])
    rec["answer"] = ""
    rec["split"] = "test"
    write_jsonl(path, [rec])
    assert load_questions(path)[0].answer == ""


def test_unknown_split_rejected(tmp_path):
    path = tmp_path / "questions.jsonl"
    rec = question_record(tiny_questions()[0])
    rec["split"] = "validation"
    write_jsonl(path, [rec])
    with pytest.raises(CorpusError):
        load_questions(path)


def test_dangling_gold_table_rejected(tmp_path):
    path = tmp_path / "questions.jsonl"
    rec = question_record(tiny_questions()[0])
    rec["gold_table_id"] = "missing"
    write_jsonl(path, [rec])
    with pytest.raises(CorpusError):
        load_questions(path, tiny_tables())


def test_question_record_omits_missing_row_index():
    rec = question_record(tiny_questions()[3])
    assert "gold_row_index" not in rec


def test_passages_for_row_orders_by_cell_then_input():
    links = LinkMap({
        ("t", 0, 1): ["p-b", "p-a"],
        ("t", 0, 0): ["p-c", "p-a"],
    })
    assert links.passages_for_row("t", 0) == ["p-c", "p-a", "p-b"]


def test_linked_rows_and_cells():
    links = tiny_links()
    assert links.linked_rows("speed") == {0, 1}
    assert links.linked_rows("opera") == {0}
    assert links.linked_cells("opera", 0) == {0, 1}
    assert links.linked_cells("opera", 1) == set()


def test_write_jsonl_puts_meta_first(tmp_path):
    path = tmp_path / "out.jsonl"
    write_jsonl(path, [{"a": 1}], meta={"seed": 7})
    lines = path.read_text().splitlines()
    assert json.loads(lines[0])["_meta"] == {"seed": 7}
    assert json.loads(lines[1]) == {"a": 1}


def test_dump_record_layout_is_stable():
    assert dump_record({"b": 1, "a": [2, 3]}) == '{"b": 1, "a": [2, 3]}'


def test_round1_half_away_from_zero():
    assert round1(Fraction(25, 100)) == 0.3
    assert round1(Fraction(-25, 100)) == -0.3
    assert round1(Fraction(1, 3)) == 0.3
    assert round1(Fraction(7, 2)) == 3.5


def test_corpus_stats_counts_and_means():
    tables = TableCorpus([Table("t", "T", "S", ["a"], [["1"], ["2"]])])
    passages = PassageCorpus([Passage("p", "P", "x y")])
    stats = corpus_stats(tables, passages, [3, 4])
    assert stats.table_count == 1
    assert stats.passage_count == 1
    assert stats.block_count == 2
    assert stats.mean_tokens_per_block == 3.5
    assert stats.mean_blocks_per_table == 2.0
