"""Acceptance gate for the bridge: the round trip into the main toolkit.

The single criterion is cross-package: files written here must parse and
behave in the main toolkit with no special-casing. The test therefore
imports the toolkit's readers (its only use of that package anywhere in the
bridge; the runtime writes files blind). Prints one PASS/FAIL line per
pytest -rA run, like the toolkit's own acceptance suite.
"""

import json

import numpy as np

from tabtext.blocks import block_from_record
from tabtext.index import load_index, search_dense
from tabtext.pretrain import coverage_ratio, import_generated

from tabtext_bridge.export import export_embeddings, pool_states
from tabtext_bridge.generate import generate_questions
from tabtext_bridge.models import HashEncoder

from conftest import BLOCKS, DUPLICATE_ID, FLAT_BLOCKS


def _report(name: str, ok: bool, detail: str) -> None:
    print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
    assert ok, f"{name}: {detail}"


def test_bridge_round_trip(flat_file, blocks_file, tmp_path):
    # 1. exported index parses in the main toolkit with the right shape
    index_path = tmp_path / "index.bin"
    manifest = export_embeddings(flat_file, index_path, strategy="first", dim=8)
    dense = load_index(index_path)
    header_ok = (dense.n == len(FLAT_BLOCKS) == manifest["n_blocks"]
                 and dense.dim == 24 == manifest["dim"]
                 and dense.strategy == "first" == manifest["strategy"]
                 and dense.ids == [rec["block_id"] for rec in FLAT_BLOCKS])

    # 2. a query duplicating one block's text must come back as its neighbor,
    #    on score, not on id tiebreaks
    dup_text = next(rec["text"] for rec in FLAT_BLOCKS
                    if rec["block_id"] == DUPLICATE_ID)
    tokens = dup_text.split()
    query = pool_states(HashEncoder(8).states(tokens), tokens, "first",
                        DUPLICATE_ID)
    hits = search_dense(dense, np.asarray(query, dtype=np.float32), k=3)
    neighbor_ok = (hits[0][0] == DUPLICATE_ID
                   and hits[0][1] > hits[1][1] + 1e-6)

    # 3. every generated question passes the toolkit-side validator
    questions_path = tmp_path / "questions_generated.jsonl"
    summary = generate_questions(blocks_file, questions_path)
    block_map = {rec["block_id"]: block_from_record(rec) for rec in BLOCKS}
    pairs, rejected = import_generated(questions_path, block_map)
    schema_ok = (rejected == 0 and len(pairs) == len(BLOCKS)
                 and summary["n_skipped"] == 0)
    coverage = coverage_ratio(pairs, block_map)

    _report("bridge round trip",
            header_ok and neighbor_ok and schema_ok,
            f"index n={dense.n} dim={dense.dim} strategy={dense.strategy} "
            f"parsed by the main toolkit; duplicate query -> {hits[0][0]} "
            f"(margin {hits[0][1] - hits[1][1]:.3f}); generated questions "
            f"{len(pairs)}/{len(BLOCKS)} schema-valid, {rejected} rejected, "
            f"coverage {coverage:.2f}")


def test_manifest_matches_header_invariant(flat_file, tmp_path):
    # dimension and strategy recorded in the manifest must match the header
    for strategy, dim in [("avg", 6), ("cls", 10)]:
        out = tmp_path / f"{strategy}.bin"
        manifest = export_embeddings(flat_file, out, strategy=strategy, dim=dim)
        dense = load_index(out)
        assert manifest["dim"] == dense.dim
        assert manifest["strategy"] == dense.strategy
        assert manifest["n_blocks"] == dense.n
        on_disk = json.loads((tmp_path / "manifest.json").read_text())
        assert on_disk == manifest
