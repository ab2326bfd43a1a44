"""Shared fixtures: a worked single-row example, a small hand-built corpus,
and a synthetic world with a planted cross-modal retrieval signal."""

from dataclasses import dataclass

import pytest

from tabtext.blocks import BlockPassage, TableTextBlock, build_blocks, flatten
from tabtext.corpus import (
    LinkMap,
    Passage,
    PassageCorpus,
    Question,
    Table,
    TableCorpus,
    question_record,
    link_records,
    passage_record,
    table_record,
    write_jsonl,
)

# Worked example used throughout: one season row of a football league table
# fused with the passages its cells link to.
LEAGUE_PREFIX = (
    "[TAB] [TITLE] J1 League [SECTITLE] History -- Timeline "
    "[DATA] Year is 2003. Important events is Extra time."
)

LEAGUE_P1_TEXT = (
    "The 2003 season was the eleventh season of the league. "
    "Yokohama F. Marinos won the championship."
)
LEAGUE_P2_TEXT = "Extra time was abolished after the 2002 season concluded."


def league_table() -> Table:
    return Table(
        "league-2003",
        "J1 League",
        "History -- Timeline",
        ["Year", "Important events"],
        [["2003", "Extra time"], ["2004", "Championship playoff"]],
    )


def league_passages() -> list[Passage]:
    return [
        Passage("psg-2003", "2003 J1 League", LEAGUE_P1_TEXT),
        Passage("psg-extra", "Extra time", LEAGUE_P2_TEXT),
    ]


def league_links() -> LinkMap:
    return LinkMap(
        {
            ("league-2003", 0, 0): ["psg-2003"],
            ("league-2003", 0, 1): ["psg-extra"],
        }
    )


@pytest.fixture()
def league_world():
    tables = TableCorpus([league_table()])
    passages = PassageCorpus(league_passages())
    return tables, passages, league_links()


@pytest.fixture()
def league_block(league_world):
    tables, passages, links = league_world
    blocks = build_blocks(tables, passages, links)
    return next(b for b in blocks if b.row_index == 0)


@pytest.fixture()
def league_flat(league_block):
    return flatten(league_block)


# A compact hand-built world exercising splits, answer locations and links.
def tiny_tables() -> TableCorpus:
    return TableCorpus(
        [
            Table(
                "speed",
                "Land speed records",
                "Jet era",
                ["Driver", "Speed"],
                [["Craig Breedlove", "407 mph"], ["Art Arfons", "434 mph"]],
            ),
            Table(
                "opera",
                "Operas of 1905",
                "Premieres",
                ["Work", "Composer"],
                [
                    ["Salome", "Richard Strauss"],
                    ["La figlia di Iorio", "Alberto Franchetti"],
                    ["Der Roland von Berlin", "Ruggero Leoncavallo"],
                ],
            ),
            Table(
                "bridge",
                "Forth Bridge",
                "Dimensions",
                ["Span", "Length"],
                [["Main span", "521 m"]],
            ),
        ]
    )


def tiny_passages() -> PassageCorpus:
    return PassageCorpus(
        [
            Passage(
                "p-breedlove",
                "Craig Breedlove",
                "Breedlove drove the Spirit of America on the salt flats.",
            ),
            Passage(
                "p-arfons",
                "Art Arfons",
                "Arfons built the Green Monster from surplus parts.",
            ),
            Passage(
                "p-salome",
                "Salome (opera)",
                "Salome premiered in Dresden in December 1905.",
            ),
            Passage(
                "p-strauss",
                "Richard Strauss",
                "Strauss conducted the premiere himself.",
            ),
            Passage(
                "p-forth",
                "Forth Bridge",
                "The cantilever bridge crosses the Firth of Forth.\n\n"
                "It carries the main railway line north from Edinburgh.",
            ),
        ]
    )


def tiny_links() -> LinkMap:
    return LinkMap(
        {
            ("speed", 0, 0): ["p-breedlove"],
            ("speed", 1, 0): ["p-arfons"],
            ("opera", 0, 0): ["p-salome"],
            ("opera", 0, 1): ["p-strauss"],
            ("bridge", 0, 0): ["p-forth"],
        }
    )


def tiny_questions() -> list[Question]:
    return [
        Question("q-speed-0", "who drove the spirit of america", "Craig Breedlove", "speed", "train", 0),
        Question("q-speed-1", "what speed did the green monster reach", "434 mph", "speed", "train", 1),
        Question("q-opera-0", "which opera premiered in dresden in 1905", "Salome", "opera", "train", 0),
        Question("q-opera-1", "who composed la figlia di iorio", "Alberto Franchetti", "opera", "dev", None),
        Question("q-bridge-0", "how long is the main span of the forth bridge", "521 m", "bridge", "dev", 0),
        Question("q-test-0", "which composer conducted the salome premiere", "", "opera", "test", None),
    ]


@pytest.fixture()
def tiny_world():
    return tiny_tables(), tiny_passages(), tiny_links(), tiny_questions()


@pytest.fixture()
def tiny_blocks(tiny_world):
    tables, passages, links, _ = tiny_world
    blocks = build_blocks(tables, passages, links)
    return {b.block_id: b for b in blocks}


def write_world(dirpath, tables, passages, links, questions):
    """Serialize a world to JSONL files and return their paths."""
    paths = {
        "tables": dirpath / "tables.jsonl",
        "passages": dirpath / "passages.jsonl",
        "links": dirpath / "links.jsonl",
        "questions": dirpath / "questions.jsonl",
    }
    write_jsonl(paths["tables"], [table_record(t) for t in tables])
    write_jsonl(paths["passages"], [passage_record(p) for p in passages])
    write_jsonl(paths["links"], link_records(links))
    write_jsonl(paths["questions"], [question_record(q) for q in questions])
    return paths


@dataclass
class SyntheticWorld:
    tables: TableCorpus
    passages: PassageCorpus
    links: LinkMap
    questions: list[Question]
    blocks: dict[str, TableTextBlock]
    flats: dict


def build_cross_modal_world(n_tables: int = 100, n_rows: int = 5, rep: int = 2,
                            filler: str = "the match report was filed late") -> SyntheticWorld:
    """Corpus where each question pairs a row token with a passage token.

    Both tokens identify the same table; the answer token sits in the row
    for even row indices and in the passage for odd ones, so hard-negative
    mining exercises both single-region swaps.
    """
    tables, passage_list, questions, blocks = [], [], [], []
    link_entries = {}
    for i in range(n_tables):
        rows = []
        for j in range(n_rows):
            answer = f"answer{i}x{j}"
            alpha = " ".join([f"alpha{i}"] * rep)
            rows.append([alpha, answer if j % 2 == 0 else "pending"])
        table = Table(f"T{i}", "records", "overview", ["who", "note"], rows)
        tables.append(table)
        for j in range(n_rows):
            answer = f"answer{i}x{j}"
            beta = " ".join([f"beta{i}"] * rep)
            parts = [beta]
            if j % 2 == 1:
                parts.append(answer)
            if filler:
                parts.append(filler)
            pid = f"p{i}x{j}"
            text = " ".join(parts)
            passage_list.append(Passage(pid, "article", text))
            link_entries[(f"T{i}", j, 0)] = [pid]
            blocks.append(
                TableTextBlock(f"T{i}-{j}", f"T{i}", j, table.header, table.rows[j],
                               table.title, table.section_title,
                               [BlockPassage(pid, "article", text)])
            )
            questions.append(
                Question(f"q{i}x{j}", f"alpha{i} beta{i}", answer, f"T{i}", "train", j)
            )
    block_map = {b.block_id: b for b in blocks}
    flats = {b.block_id: flatten(b) for b in blocks}
    return SyntheticWorld(TableCorpus(tables), PassageCorpus(passage_list),
                          LinkMap(link_entries), questions, block_map, flats)


@pytest.fixture(scope="session")
def cross_modal_world():
    return build_cross_modal_world()
