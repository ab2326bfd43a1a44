"""Shared fixtures: a three-block corpus in both wire formats."""

import json

import pytest

FLAT_BLOCKS = [
    {"block_id": "opera-1905#0",
     "text": "[TAB] [TITLE] Opera Premieres [SECTITLE] History [DATA] "
             "Year is 1905. Work is Salome. [PSG] Salome premiered in "
             "Dresden . [SEP] It caused a scandal ."},
    {"block_id": "opera-1905#1",
     "text": "[TAB] [TITLE] Opera Premieres [SECTITLE] History [DATA] "
             "Year is 1911. Work is Der Rosenkavalier. [PSG] A comedy "
             "for music ."},
    {"block_id": "speed-jet#0",
     "text": "[TAB] [TITLE] Land Speed Records [SECTITLE] Jet era [DATA] "
             "Year is 1964. Driver is Craig Breedlove. [PSG] Spirit of "
             "America ran at Bonneville ."},
]

# the flattened text of this block doubles as the planted duplicate query
DUPLICATE_ID = "speed-jet#0"

BLOCKS = [
    {"block_id": "opera-1905#0", "table_id": "opera-1905", "row_index": 0,
     "header": ["Year", "Work", "Conductor"],
     "row": ["1905", "Salome", "Ernst von Schuch"],
     "title": "Opera Premieres", "section_title": "History",
     "passages": [{"passage_id": "p-salome", "title": "Salome",
                   "text": "Salome premiered in Dresden."}]},
    {"block_id": "opera-1905#1", "table_id": "opera-1905", "row_index": 1,
     "header": ["Year", "Work", "Conductor"],
     "row": ["1911", "Der Rosenkavalier", ""],
     "title": "Opera Premieres", "section_title": "History",
     "passages": [{"passage_id": "p-rosen", "title": "Der Rosenkavalier",
                   "text": "A comedy for music."}]},
    {"block_id": "speed-jet#0", "table_id": "speed-jet", "row_index": 0,
     "header": ["Year", "Driver"], "row": ["1964", "Craig Breedlove"],
     "title": "Land Speed Records", "section_title": "Jet era",
     "passages": []},
]

ORACLE_PAIRS = [
    {"block_id": "opera-1905#0",
     "question": "Which entry in Opera Premieres has Year 1905?"},
    {"block_id": "opera-1905#1",
     "question": "Which entry in Opera Premieres has Work Der Rosenkavalier?"},
    {"block_id": "speed-jet#0",
     "question": "Which entry in Land Speed Records has Year 1964?"},
]


def write_jsonl(path, records, meta=None):
    with open(path, "w", encoding="utf-8") as f:
        if meta is not None:
            f.write(json.dumps({"_meta": meta}) + "\n")
        for rec in records:
            f.write(json.dumps(rec) + "\n")
    return path


@pytest.fixture
def flat_file(tmp_path):
    return write_jsonl(tmp_path / "flat_blocks.jsonl", FLAT_BLOCKS,
                       meta={"tool": "fixture"})


@pytest.fixture
def blocks_file(tmp_path):
    return write_jsonl(tmp_path / "blocks.jsonl", BLOCKS,
                       meta={"tool": "fixture"})


@pytest.fixture
def pairs_file(tmp_path):
    return write_jsonl(tmp_path / "pairs.jsonl", ORACLE_PAIRS)
