"""Export pooled block embeddings in the toolkit's binary index format.

The layout is reimplemented here from the published format, not imported:

    magic "OTTE" | version u32 | n u64 | dim u32 | strategy tag u8 |
    crc32 u32 of the payload | n * dim float32 little-endian, row-major

with block ids in an ids.txt sidecar (one per line, same directory) and a
manifest.json recording model, tokenizer, dimension, strategy, counts and a
content hash of the input file. All files are written atomically (temp file
in the target directory, then rename).
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
import tempfile
import zlib
from pathlib import Path

import numpy as np

from .models import resolve_model

MAGIC = b"OTTE"
FORMAT_VERSION = 1
HEADER = struct.Struct("<4sIQIBI")
STRATEGY_TAGS = {"first": 0, "avg": 1, "max": 2, "selfatt": 3, "cls3": 4,
                 "cls": 5}
POOLING = ("first", "avg", "max", "cls3", "cls")   # selfatt needs learned weights


def atomic_write(path: str | Path, data: bytes) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        os.unlink(tmp)
        raise


def read_flat_blocks(path: str | Path) -> list[tuple[str, str]]:
    """(block_id, flattened text) pairs; a leading _meta record is skipped."""
    pairs: list[tuple[str, str]] = []
    seen: set[str] = set()
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
            block_id, text = rec.get("block_id"), rec.get("text")
            if not isinstance(block_id, str) or not isinstance(text, str):
                raise ValueError(f"{path}:{lineno}: needs block_id and text")
            if block_id in seen:
                raise ValueError(f"{path}:{lineno}: duplicate block {block_id!r}")
            seen.add(block_id)
            pairs.append((block_id, text))
    return pairs


def _marker(tokens: list[str], marker: str, block_id: str) -> int:
    try:
        return tokens.index(marker)
    except ValueError:
        raise ValueError(
            f"marker {marker} not found in tokenized block {block_id!r}") from None


def _segment(states: np.ndarray, start: int, end: int, marker_pos: int,
             how: str) -> np.ndarray:
    # empty segments pool the marker state itself, like the main toolkit
    seg = states[start:end] if end > start else states[marker_pos:marker_pos + 1]
    if how == "avg":
        return seg.mean(axis=0)
    return seg.max(axis=0)


def pool_states(states: np.ndarray, tokens: list[str], strategy: str,
                block_id: str) -> np.ndarray:
    if strategy not in POOLING:
        raise ValueError(f"unsupported pooling {strategy!r}; one of {POOLING}")
    h0 = states[0]
    if strategy == "cls":
        return h0
    if strategy == "cls3":
        return np.concatenate([h0, h0, h0])
    tab = _marker(tokens, "[TAB]", block_id)
    psg = _marker(tokens, "[PSG]", block_id)
    if strategy == "first":
        return np.concatenate([h0, states[tab], states[psg]])
    table = _segment(states, tab + 1, psg, tab, strategy)
    text = _segment(states, psg + 1, len(tokens), psg, strategy)
    return np.concatenate([h0, table, text])


def export_embeddings(flat_blocks: str | Path, out: str | Path,
                      model: str = "hash-v1", strategy: str = "first",
                      dim: int = 32) -> dict:
    """Write out (index format), ids.txt and manifest.json; returns the manifest."""
    source = Path(flat_blocks)
    pairs = read_flat_blocks(source)
    encoder = resolve_model(model, dim)
    out_dim = dim if strategy == "cls" else 3 * dim
    vectors = np.zeros((len(pairs), out_dim), dtype=np.float32)
    for i, (block_id, text) in enumerate(pairs):
        tokens = text.split()
        if not tokens:
            raise ValueError(f"block {block_id!r} has empty text")
        states = encoder.states(tokens)
        if states.shape != (len(tokens), dim):
            raise ValueError(
                f"model {model!r} returned shape {states.shape} for block "
                f"{block_id!r}, expected ({len(tokens)}, {dim})")
        vectors[i] = pool_states(states, tokens, strategy, block_id)

    payload = np.ascontiguousarray(vectors, dtype="<f4").tobytes()
    header = HEADER.pack(MAGIC, FORMAT_VERSION, len(pairs), out_dim,
                         STRATEGY_TAGS[strategy], zlib.crc32(payload))
    out = Path(out)
    atomic_write(out, header + payload)
    ids_text = "".join(block_id + "\n" for block_id, _ in pairs)
    atomic_write(out.parent / "ids.txt", ids_text.encode("utf-8"))

    manifest = {
        "model": model,
        "tokenizer": "whitespace",
        "dim": out_dim,
        "state_dim": dim,
        "strategy": strategy,
        "n_blocks": len(pairs),
        "content_hash": hashlib.sha256(source.read_bytes()).hexdigest(),
    }
    atomic_write(out.parent / "manifest.json",
                 (json.dumps(manifest, sort_keys=True, indent=2) + "\n").encode("utf-8"))
    return manifest
