"""Dense vector index: exact top-k dot-product search plus binary persistence.

index.bin layout, all little-endian:

    magic "OTTE" | version u32 | n u64 | dim u32 | strategy tag u8 |
    crc32 u32 of the vector payload | n * dim float32, row-major

Block ids are a sidecar named ids.txt in the same directory (one id per line,
row order). Scores are computed in float32, ties broken by block id ascending,
so rankings are reproducible bit-for-bit across runs and platforms.

An approximate mode (clustered shortlist with exact rerank) is available for
large corpora; it self-tests its recall against exact search at build time and
refuses to build below the configured target.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .encoder import (EncoderParams, MerEmbedding, STRATEGY_TAGS, TAG_STRATEGIES,
                      encode_flat, pool_block)
from .blocks import FlattenedBlock
from .tokenizer import TokenizerContract, WHITESPACE

MAGIC = b"OTTE"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sIQIBI")


@dataclass
class DenseIndex:
    ids: list[str]
    vectors: np.ndarray          # (n, dim) float32
    strategy: str

    def __post_init__(self):
        if len(self.ids) != self.vectors.shape[0]:
            raise ValueError(f"{len(self.ids)} ids for {self.vectors.shape[0]} vectors")
        if len(set(self.ids)) != len(self.ids):
            raise ValueError("duplicate block ids in index")
        if self.strategy not in STRATEGY_TAGS:
            raise ValueError(f"unknown strategy {self.strategy!r}")
        self.vectors = np.ascontiguousarray(self.vectors, dtype=np.float32)

    @property
    def n(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]


def build_dense(params: EncoderParams, flats: Sequence[FlattenedBlock],
                tokenizer: TokenizerContract = WHITESPACE,
                strategy: str | None = None) -> DenseIndex:
    """Embed every flattened block with one encoder and pooling strategy."""
    strategy = strategy or params.strategy
    dim = params.d if strategy == "cls" else 3 * params.d
    vectors = np.zeros((len(flats), dim), dtype=np.float32)
    ids = []
    for i, flat in enumerate(flats):
        hidden = encode_flat(params, flat, tokenizer)
        emb = pool_block(hidden, strategy, params.w_att)
        vectors[i] = emb.vector.astype(np.float32)
        ids.append(flat.block_id)
    return DenseIndex(ids, vectors, strategy)


def _as_query(query: MerEmbedding | np.ndarray) -> np.ndarray:
    vec = query.vector if isinstance(query, MerEmbedding) else query
    return np.asarray(vec, dtype=np.float32)


def _rank(ids: Sequence[str], scores: np.ndarray, k: int) -> list[tuple[str, float]]:
    order = np.lexsort((np.asarray(ids, dtype=str), -scores))
    top = order[: min(k, len(order))]
    return [(ids[i], float(scores[i])) for i in top]


def search_dense(index: DenseIndex, query: MerEmbedding | np.ndarray,
                 k: int) -> list[tuple[str, float]]:
    """Exact top-k by dot product; k larger than the index returns everything."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    q = _as_query(query)
    if q.shape != (index.dim,):
        raise ValueError(f"query dimension {q.shape} does not match index ({index.dim},)")
    scores = index.vectors @ q
    return _rank(index.ids, scores, k)


# ---------------------------------------------------------------------------
# persistence


def ids_path(index_path: str | Path) -> Path:
    return Path(index_path).parent / "ids.txt"


def save_index(index: DenseIndex, path: str | Path,
               ids_file: str | Path | None = None) -> None:
    payload = np.ascontiguousarray(index.vectors, dtype="<f4").tobytes()
    header = _HEADER.pack(MAGIC, FORMAT_VERSION, index.n, index.dim,
                          STRATEGY_TAGS[index.strategy], zlib.crc32(payload))
    with open(path, "wb") as f:
        f.write(header)
        f.write(payload)
    ids_file = Path(ids_file) if ids_file is not None else ids_path(path)
    ids_file.write_text("".join(i + "\n" for i in index.ids), encoding="utf-8")


def load_index(path: str | Path, ids_file: str | Path | None = None) -> DenseIndex:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ValueError(f"index {path} too short for header")
    magic, version, n, dim, tag, crc = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise ValueError(f"index {path} has bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise ValueError(f"index {path} has unsupported version {version}")
    if tag not in TAG_STRATEGIES:
        raise ValueError(f"index {path} has unknown strategy tag {tag}")
    payload = raw[_HEADER.size:]
    if len(payload) != 4 * n * dim:
        raise ValueError(f"index {path} payload is {len(payload)} bytes, "
                         f"expected {4 * n * dim}")
    if zlib.crc32(payload) != crc:
        raise ValueError(f"index {path} failed its checksum")
    vectors = np.frombuffer(payload, dtype="<f4").reshape(n, dim).copy()
    ids_file = Path(ids_file) if ids_file is not None else ids_path(path)
    ids = ids_file.read_text(encoding="utf-8").splitlines()
    if len(ids) != n:
        raise ValueError(f"{ids_file} lists {len(ids)} ids, index holds {n} vectors")
    return DenseIndex(ids, vectors, TAG_STRATEGIES[tag])


# ---------------------------------------------------------------------------
# approximate mode: sqrt(n) centroids, nprobe shortlist, exact rerank


@dataclass
class ApproxIndex:
    index: DenseIndex
    centroids: np.ndarray               # (c, dim) float32
    lists: list[np.ndarray]             # row indices per centroid
    nprobe: int
    selftest_recall: float


def _kmeans(data: np.ndarray, c: int, rng: np.random.Generator,
            iters: int = 10) -> tuple[np.ndarray, np.ndarray]:
    """Plain Lloyd iterations; empty clusters reseed to the farthest point."""
    centroids = data[rng.choice(len(data), size=c, replace=False)].copy()
    assign = np.zeros(len(data), dtype=np.int64)
    for _ in range(iters):
        d2 = ((data[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        assign = d2.argmin(axis=1)
        for j in range(c):
            members = data[assign == j]
            if len(members):
                centroids[j] = members.mean(axis=0)
            else:
                centroids[j] = data[d2.min(axis=1).argmax()]
    return centroids, assign


def build_approx(index: DenseIndex, nprobe: int = 4, seed: int = 0,
                 selftest_queries: int = 100, selftest_k: int = 10,
                 target_recall: float = 0.95) -> ApproxIndex:
    """Cluster the index and verify shortlist recall against exact search.

    The build fails loudly when the measured recall@k over perturbed sample
    queries falls below ``target_recall``; callers then raise nprobe or fall
    back to exact search.
    """
    if index.n < 2:
        raise ValueError("approximate mode needs at least 2 vectors")
    rng = np.random.default_rng(seed)
    c = max(1, int(round(np.sqrt(index.n))))
    data = index.vectors.astype(np.float64)
    centroids, assign = _kmeans(data, c, rng)
    lists = [np.flatnonzero(assign == j) for j in range(c)]
    approx = ApproxIndex(index, centroids.astype(np.float32), lists,
                         max(1, nprobe), 0.0)

    n_q = min(selftest_queries, index.n)
    picks = rng.choice(index.n, size=n_q, replace=False)
    noise = rng.normal(0.0, 0.05 * (data.std() + 1e-12), size=(n_q, index.dim))
    k = min(selftest_k, index.n)
    hits = total = 0
    for row, eps in zip(picks, noise):
        q = (data[row] + eps).astype(np.float32)
        exact = {i for i, _ in search_dense(index, q, k)}
        got = {i for i, _ in search_approx(approx, q, k)}
        hits += len(exact & got)
        total += len(exact)
    recall = hits / total if total else 1.0
    if recall < target_recall:
        raise ValueError(
            f"approximate index self-test recall {recall:.3f} below target "
            f"{target_recall:.3f}; raise nprobe or use exact search")
    approx.selftest_recall = recall
    return approx


def search_approx(approx: ApproxIndex, query: MerEmbedding | np.ndarray,
                  k: int) -> list[tuple[str, float]]:
    """Exact rerank over the nprobe nearest clusters' members."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    q = _as_query(query)
    index = approx.index
    if q.shape != (index.dim,):
        raise ValueError(f"query dimension {q.shape} does not match index ({index.dim},)")
    d2 = ((approx.centroids - q[None, :]) ** 2).sum(axis=1)
    probe = np.argsort(d2, kind="stable")[: approx.nprobe]
    rows = np.concatenate([approx.lists[j] for j in probe]) if len(probe) else []
    if len(rows) == 0:
        return []
    scores = index.vectors[rows] @ q
    ranked = _rank([index.ids[r] for r in rows], scores, k)
    return ranked
