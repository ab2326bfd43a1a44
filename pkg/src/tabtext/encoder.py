"""Toy dual-encoder: per-token hidden states, modality pooling, dot scoring.

The encoder is the cheapest architecture that is both contextual and fully
differentiable:

    e_t = E[token_t]
    m   = mean_t e_t
    h_t = P @ tanh(e_t + A @ m)

A block embedding concatenates a global vector with one pooled vector per
modality region, [h_cls; h_table; h_text] (3d total); questions replicate
their single vector three times so the dot product decomposes over the three
chunks. Pooling strategies over a modality span:

    first    marker token's hidden state ([TAB] / [PSG])
    avg      mean over span tokens
    max      elementwise max over span tokens
    selfatt  softmax(w_att . h_t)-weighted mean over span tokens
    cls3     the leading token's state repeated three times (dimension control)
    cls      the leading token's state alone (d-dim, the no-enhancement ablation)

An empty modality span falls back to the marker's own hidden state so the
embedding dimension never varies. All math runs in float64; checkpoints
store float32 as little-endian row-major with a plain-text vocab sidecar.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .blocks import FlattenedBlock
from .tokenizer import PSG, TAB, TokenizerContract, WHITESPACE

UNK = "<unk>"

STRATEGIES = ("first", "avg", "max", "selfatt", "cls3", "cls")
STRATEGY_TAGS = {name: i for i, name in enumerate(STRATEGIES)}
TAG_STRATEGIES = {i: name for name, i in STRATEGY_TAGS.items()}

MAGIC = b"OTTE"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sIIIB")

QUESTION_BUDGET = 70


@dataclass
class EncoderParams:
    """One encoder's parameters. Question and block encoders may share one
    instance or hold two independent copies."""

    vocab: dict[str, int]
    E: np.ndarray       # (V, d) token embeddings
    A: np.ndarray       # (d, d) context mixing
    P: np.ndarray       # (d, d) output projection
    w_att: np.ndarray   # (d,)  selfatt scoring vector
    d: int
    strategy: str = "first"

    def token_ids(self, tokens: list[str]) -> np.ndarray:
        unk = self.vocab[UNK]
        return np.array([self.vocab.get(t, unk) for t in tokens], dtype=np.int64)

    def copy(self) -> "EncoderParams":
        return EncoderParams(dict(self.vocab), self.E.copy(), self.A.copy(),
                             self.P.copy(), self.w_att.copy(), self.d, self.strategy)

    def round_f32(self) -> None:
        """Snap parameters to float32 values (checkpoint-representable state)."""
        for name in ("E", "A", "P", "w_att"):
            arr = getattr(self, name)
            setattr(self, name, arr.astype(np.float32).astype(np.float64))


def build_vocab(token_lists) -> dict[str, int]:
    """Deterministic vocab: index 0 is the unknown token, rest sorted."""
    seen: set[str] = set()
    for tokens in token_lists:
        seen.update(tokens)
    seen.discard(UNK)
    return {UNK: 0, **{t: i for i, t in enumerate(sorted(seen), start=1)}}


def init_params(vocab: dict[str, int], d: int, seed: int,
                strategy: str = "first") -> EncoderParams:
    """Entries i.i.d. uniform in [-0.1, 0.1], seeded for reproducible runs."""
    if d < 2:
        raise ValueError(f"hidden dimension must be >= 2, got {d}")
    if strategy not in STRATEGY_TAGS:
        raise ValueError(f"unknown strategy {strategy!r}")
    rng = np.random.default_rng(seed)
    v = len(vocab)
    u = lambda *shape: rng.uniform(-0.1, 0.1, size=shape)
    return EncoderParams(vocab, u(v, d), u(d, d), u(d, d), u(d), d, strategy)


@dataclass
class HiddenStates:
    """Per-token hidden states plus marker positions and modality spans.

    Z and m are forward caches kept for the backward pass.
    """

    H: np.ndarray                       # (T, d)
    ids: np.ndarray                     # (T,) vocab indices
    tab_pos: int | None = None
    psg_pos: int | None = None
    table_span: tuple[int, int] | None = None
    text_span: tuple[int, int] | None = None
    Z: np.ndarray = field(default=None, repr=False)
    m: np.ndarray = field(default=None, repr=False)

    def __len__(self) -> int:
        return self.H.shape[0]


@dataclass(frozen=True)
class MerEmbedding:
    """Pooled representation; 3d-dimensional except the cls ablation (d)."""

    vector: np.ndarray
    strategy: str


@dataclass
class Grads:
    E: np.ndarray
    A: np.ndarray
    P: np.ndarray
    w_att: np.ndarray

    @classmethod
    def zeros_like(cls, params: EncoderParams) -> "Grads":
        return cls(np.zeros_like(params.E), np.zeros_like(params.A),
                   np.zeros_like(params.P), np.zeros_like(params.w_att))

    def add_(self, other: "Grads") -> None:
        self.E += other.E
        self.A += other.A
        self.P += other.P
        self.w_att += other.w_att

    def max_abs(self) -> float:
        return max(float(np.max(np.abs(a))) if a.size else 0.0
                   for a in (self.E, self.A, self.P, self.w_att))


# ---------------------------------------------------------------------------
# forward


def encode_tokens(params: EncoderParams, tokens: list[str]) -> HiddenStates:
    """Encode a token sequence; marker positions found by first occurrence."""
    if not tokens:
        raise ValueError("cannot encode an empty token sequence")
    ids = params.token_ids(tokens)
    e = params.E[ids]                      # (T, d)
    m = e.mean(axis=0)                     # (d,)
    z = np.tanh(e + (params.A @ m)[None, :])
    h = z @ params.P.T
    tab_pos = tokens.index(TAB) if TAB in tokens else None
    psg_pos = tokens.index(PSG) if PSG in tokens else None
    table_span = text_span = None
    if tab_pos is not None and psg_pos is not None:
        table_span = (tab_pos + 1, psg_pos)
        text_span = (psg_pos + 1, len(tokens))
    return HiddenStates(h, ids, tab_pos, psg_pos, table_span, text_span, Z=z, m=m)


def encode_flat(params: EncoderParams, flat: FlattenedBlock,
                tokenizer: TokenizerContract = WHITESPACE) -> HiddenStates:
    """Encode a flattened block, taking spans from the block record."""
    hidden = encode_tokens(params, tokenizer.tokenize(flat.text))
    hidden.table_span = flat.table_span
    hidden.text_span = flat.text_span
    return hidden


def encoder_backward(params: EncoderParams, hidden: HiddenStates,
                     G_h: np.ndarray, out: Grads | None = None) -> Grads:
    """Accumulate parameter gradients for one sequence given dL/dH."""
    z, m, ids = hidden.Z, hidden.m, hidden.ids
    T = z.shape[0]
    grads = out if out is not None else Grads.zeros_like(params)
    grads.P += G_h.T @ z
    G_u = (G_h @ params.P) * (1.0 - z * z)
    s = G_u.sum(axis=0)
    grads.A += np.outer(s, m)
    g_m = params.A.T @ s
    G_e = G_u + g_m[None, :] / T
    np.add.at(grads.E, ids, G_e)
    return grads


# ---------------------------------------------------------------------------
# pooling


def _span_or_marker(hidden: HiddenStates, span: tuple[int, int] | None,
                    marker: int | None, side: str) -> tuple[int, int]:
    if marker is None:
        raise ValueError(f"no {side} marker position in hidden states")
    if span is None or span[0] >= span[1]:
        return (marker, marker + 1)  # empty span: fall back to the marker itself
    return span


def pool_with_cache(hidden: HiddenStates, strategy: str,
                    w_att: np.ndarray | None = None) -> tuple[np.ndarray, dict]:
    H = hidden.H
    h0 = H[0]
    cache: dict = {"strategy": strategy}
    if strategy == "cls":
        return h0.copy(), cache
    if strategy == "cls3":
        return np.concatenate([h0, h0, h0]), cache

    spans = {
        "table": _span_or_marker(hidden, hidden.table_span, hidden.tab_pos, "table"),
        "text": _span_or_marker(hidden, hidden.text_span, hidden.psg_pos, "text"),
    }
    if strategy == "first":
        spans = {"table": (hidden.tab_pos, hidden.tab_pos + 1),
                 "text": (hidden.psg_pos, hidden.psg_pos + 1)}
    cache["spans"] = spans

    pooled = {}
    for side, (s, e) in spans.items():
        Hs = H[s:e]
        if strategy in ("first",) or e - s == 1:
            pooled[side] = Hs[0]
            cache[side] = ("single",)
        elif strategy == "avg":
            pooled[side] = Hs.mean(axis=0)
            cache[side] = ("avg",)
        elif strategy == "max":
            amax = np.argmax(Hs, axis=0)
            pooled[side] = Hs[amax, np.arange(Hs.shape[1])]
            cache[side] = ("max", amax)
        elif strategy == "selfatt":
            if w_att is None:
                raise ValueError("selfatt pooling requires the attention vector")
            a = Hs @ w_att
            a = a - a.max()
            alpha = np.exp(a)
            alpha /= alpha.sum()
            pooled[side] = alpha @ Hs
            cache[side] = ("selfatt", alpha)
        else:
            raise ValueError(f"unknown strategy {strategy!r}")
    return np.concatenate([h0, pooled["table"], pooled["text"]]), cache


def pool_block(hidden: HiddenStates, strategy: str,
               w_att: np.ndarray | None = None) -> MerEmbedding:
    vec, _ = pool_with_cache(hidden, strategy, w_att)
    return MerEmbedding(vec, strategy)


def pool_backward(hidden: HiddenStates, cache: dict, grad: np.ndarray,
                  w_att: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Map dL/d(pooled vector) back to dL/dH and dL/dw_att."""
    H = hidden.H
    d = H.shape[1]
    G_h = np.zeros_like(H)
    g_w = np.zeros(d)
    strategy = cache["strategy"]
    if strategy == "cls":
        G_h[0] += grad
        return G_h, g_w
    g1, g2, g3 = grad[:d], grad[d:2 * d], grad[2 * d:]
    G_h[0] += g1
    if strategy == "cls3":
        G_h[0] += g2 + g3
        return G_h, g_w
    for side, g in (("table", g2), ("text", g3)):
        s, e = cache["spans"][side]
        mode = cache[side]
        if mode[0] == "single":
            G_h[s] += g
        elif mode[0] == "avg":
            G_h[s:e] += g[None, :] / (e - s)
        elif mode[0] == "max":
            amax = mode[1]
            np.add.at(G_h[s:e], (amax, np.arange(d)), g)
        elif mode[0] == "selfatt":
            alpha = mode[1]
            Hs = H[s:e]
            galpha = Hs @ g
            da = alpha * (galpha - float(alpha @ galpha))
            G_h[s:e] += np.outer(alpha, g) + np.outer(da, w_att)
            g_w += Hs.T @ da
    return G_h, g_w


# ---------------------------------------------------------------------------
# questions and scoring


def question_embedding(params: EncoderParams, tokens: list[str],
                       budget: int = QUESTION_BUDGET,
                       strategy: str | None = None) -> MerEmbedding:
    """Encode a question and replicate its vector to match the block dimension."""
    strategy = strategy or params.strategy
    hidden = encode_tokens(params, tokens[:budget])
    q = hidden.H[0]
    if strategy == "cls":
        return MerEmbedding(q.copy(), strategy)
    return MerEmbedding(np.concatenate([q, q, q]), strategy)


def score(q: MerEmbedding, b: MerEmbedding) -> float:
    """Relevance as a plain dot product."""
    if q.vector.shape != b.vector.shape:
        raise ValueError(
            f"dimension mismatch: question {q.vector.shape} vs block {b.vector.shape}")
    return float(np.dot(q.vector, b.vector))


# ---------------------------------------------------------------------------
# checkpoint format: header + row-major float32, vocab in a text sidecar


def vocab_path(path: str | Path) -> Path:
    return Path(str(path) + ".vocab")


def save_params(params: EncoderParams, path: str | Path) -> None:
    header = _HEADER.pack(MAGIC, FORMAT_VERSION, len(params.vocab), params.d,
                          STRATEGY_TAGS[params.strategy])
    with open(path, "wb") as f:
        f.write(header)
        for arr in (params.E, params.A, params.P, params.w_att):
            f.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    tokens = sorted(params.vocab, key=params.vocab.get)
    vocab_path(path).write_text("\n".join(tokens) + "\n", encoding="utf-8")


def load_params(path: str | Path) -> EncoderParams:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ValueError(f"checkpoint {path} too short for header")
    magic, version, v, d, tag = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise ValueError(f"checkpoint {path} has bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise ValueError(f"checkpoint {path} has unsupported version {version}")
    if tag not in TAG_STRATEGIES:
        raise ValueError(f"checkpoint {path} has unknown strategy tag {tag}")
    sizes = [v * d, d * d, d * d, d]
    expected = _HEADER.size + 4 * sum(sizes)
    if len(raw) != expected:
        raise ValueError(f"checkpoint {path} has {len(raw)} bytes, expected {expected}")
    flat = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size).astype(np.float64)
    offsets = np.cumsum([0] + sizes)
    E, A, P, w_att = (flat[offsets[i]:offsets[i + 1]] for i in range(4))
    tokens = vocab_path(path).read_text(encoding="utf-8").splitlines()
    if len(tokens) != v:
        raise ValueError(f"vocab sidecar has {len(tokens)} tokens, header says {v}")
    vocab = {t: i for i, t in enumerate(tokens)}
    return EncoderParams(vocab, E.reshape(v, d), A.reshape(d, d), P.reshape(d, d),
                         w_att.copy(), d, TAG_STRATEGIES[tag])
