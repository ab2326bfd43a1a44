"""Embedding export: header layout, determinism, pooling and failure modes."""

import json
import struct
import zlib

import numpy as np
import pytest

from tabtext_bridge.export import (HEADER, MAGIC, STRATEGY_TAGS,
                                   export_embeddings, pool_states,
                                   read_flat_blocks)
from tabtext_bridge.models import HashEncoder, register_model

from conftest import FLAT_BLOCKS, write_jsonl


def parse_header(path):
    raw = path.read_bytes()
    magic, version, n, dim, tag, crc = HEADER.unpack_from(raw)
    return {"magic": magic, "version": version, "n": n, "dim": dim,
            "tag": tag, "crc": crc, "payload": raw[HEADER.size:]}


def test_header_matches_manifest(flat_file, tmp_path):
    out = tmp_path / "index.bin"
    manifest = export_embeddings(flat_file, out, strategy="avg", dim=8)
    header = parse_header(out)
    assert header["magic"] == MAGIC
    assert header["version"] == 1
    assert header["n"] == manifest["n_blocks"] == len(FLAT_BLOCKS)
    assert header["dim"] == manifest["dim"] == 24
    assert header["tag"] == STRATEGY_TAGS["avg"]
    assert header["crc"] == zlib.crc32(header["payload"])
    assert len(header["payload"]) == header["n"] * header["dim"] * 4
    ids = (tmp_path / "ids.txt").read_text().splitlines()
    assert ids == [rec["block_id"] for rec in FLAT_BLOCKS]
    on_disk = json.loads((tmp_path / "manifest.json").read_text())
    assert on_disk == manifest


def test_same_input_same_bytes_and_hash(flat_file, tmp_path):
    a_dir, b_dir = tmp_path / "a", tmp_path / "b"
    a_dir.mkdir(), b_dir.mkdir()
    m1 = export_embeddings(flat_file, a_dir / "index.bin", dim=16)
    m2 = export_embeddings(flat_file, b_dir / "index.bin", dim=16)
    assert m1["content_hash"] == m2["content_hash"]
    assert (a_dir / "index.bin").read_bytes() == (b_dir / "index.bin").read_bytes()
    assert (a_dir / "manifest.json").read_bytes() == (b_dir / "manifest.json").read_bytes()


def test_cls3_rows_are_three_copies(flat_file, tmp_path):
    out = tmp_path / "index.bin"
    export_embeddings(flat_file, out, strategy="cls3", dim=8)
    header = parse_header(out)
    rows = np.frombuffer(header["payload"], dtype="<f4").reshape(header["n"], 24)
    assert np.array_equal(rows[:, :8], rows[:, 8:16])
    assert np.array_equal(rows[:, 8:16], rows[:, 16:])


def test_cls_dim_is_single_width(flat_file, tmp_path):
    manifest = export_embeddings(flat_file, tmp_path / "index.bin",
                                 strategy="cls", dim=8)
    assert manifest["dim"] == 8


def test_missing_marker_is_an_error(tmp_path):
    flat = write_jsonl(tmp_path / "flat.jsonl",
                       [{"block_id": "b0", "text": "no markers here at all"}])
    with pytest.raises(ValueError, match=r"marker \[TAB\] not found"):
        export_embeddings(flat, tmp_path / "index.bin", strategy="first", dim=4)


def test_cls_ignores_markers(tmp_path):
    flat = write_jsonl(tmp_path / "flat.jsonl",
                       [{"block_id": "b0", "text": "no markers here at all"}])
    manifest = export_embeddings(flat, tmp_path / "index.bin",
                                 strategy="cls", dim=4)
    assert manifest["n_blocks"] == 1


def test_unknown_model_lists_available(flat_file, tmp_path):
    with pytest.raises(ValueError, match="unknown model 'roberta'.*hash-v1"):
        export_embeddings(flat_file, tmp_path / "index.bin", model="roberta")


def test_selfatt_needs_learned_weights(flat_file, tmp_path):
    with pytest.raises(ValueError, match="unsupported pooling"):
        export_embeddings(flat_file, tmp_path / "index.bin", strategy="selfatt")


def test_duplicate_block_id_rejected(tmp_path):
    flat = write_jsonl(tmp_path / "flat.jsonl",
                       [{"block_id": "b0", "text": "[TAB] x [PSG] y"},
                        {"block_id": "b0", "text": "[TAB] z [PSG] w"}])
    with pytest.raises(ValueError, match="duplicate block 'b0'"):
        export_embeddings(flat, tmp_path / "index.bin")


def test_dimension_mismatch_names_the_model(flat_file, tmp_path):
    class Short:
        name = "short-v0"

        def __init__(self, dim):
            self.dim = dim

        def states(self, tokens):
            return np.zeros((len(tokens), self.dim + 1), dtype=np.float32)

    register_model("short-v0", Short)
    with pytest.raises(ValueError, match="'short-v0' returned shape"):
        export_embeddings(flat_file, tmp_path / "index.bin", model="short-v0",
                          dim=4)


def test_failed_export_leaves_no_files(tmp_path):
    flat = write_jsonl(tmp_path / "flat.jsonl",
                       [{"block_id": "b0", "text": "missing psg [TAB] only"}])
    out_dir = tmp_path / "out"
    out_dir.mkdir()
    with pytest.raises(ValueError):
        export_embeddings(flat, out_dir / "index.bin", strategy="first", dim=4)
    assert sorted(out_dir.iterdir()) == []


def test_no_temp_files_after_success(flat_file, tmp_path):
    out_dir = tmp_path / "out"
    out_dir.mkdir()
    export_embeddings(flat_file, out_dir / "index.bin", dim=4)
    assert sorted(p.name for p in out_dir.iterdir()) == [
        "ids.txt", "index.bin", "manifest.json"]


def test_empty_segment_pools_marker_state(tmp_path):
    # no tokens after [PSG]: text segment falls back to the marker state
    text = "[TAB] alpha beta [PSG]"
    flat = write_jsonl(tmp_path / "flat.jsonl", [{"block_id": "b0", "text": text}])
    export_embeddings(flat, tmp_path / "index.bin", strategy="avg", dim=4)
    enc = HashEncoder(4)
    states = enc.states(text.split())
    expected = pool_states(states, text.split(), "avg", "b0")
    header = parse_header(tmp_path / "index.bin")
    got = np.frombuffer(header["payload"], dtype="<f4")
    assert np.allclose(got, expected, atol=1e-6)
    assert np.allclose(got[8:], states[3], atol=1e-6)


def test_meta_line_skipped_and_text_required(tmp_path):
    path = tmp_path / "flat.jsonl"
    path.write_text('{"_meta": {"tool": "x"}}\n{"block_id": "b0"}\n')
    with pytest.raises(ValueError, match="needs block_id and text"):
        read_flat_blocks(path)
