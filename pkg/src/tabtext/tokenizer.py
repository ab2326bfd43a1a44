"""Tokenizers used across the toolkit.

Two distinct tokenizations exist on purpose:

* block tokens: marker-preserving whitespace split used for flattened
  blocks, questions, token budgets and the dense encoder. The segment
  markers ([TAB], [PSG], ...) always come out as single tokens because
  flattening emits them space-delimited.
* word tokens: lowercased alphanumeric terms used by the sparse paths
  (BM25, TF-IDF passage ranking) and corpus statistics.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Callable

TAB = "[TAB]"
PSG = "[PSG]"
TITLE = "[TITLE]"
SECTITLE = "[SECTITLE]"
DATA = "[DATA]"
SEP = "[SEP]"

SPECIAL_TOKENS = (TAB, PSG, TITLE, SECTITLE, DATA, SEP)

_WORD_RE = re.compile(r"\w+")


def normalize_ws(text: str) -> str:
    """Collapse whitespace runs and trim. Applied to payloads at flatten time."""
    return " ".join(text.split())


def normalize_answer(text: str) -> str:
    """Canonical form for answer containment checks: casefold + collapsed whitespace."""
    return normalize_ws(text).casefold()


@dataclass(frozen=True)
class TokenizerContract:
    """A named, deterministic text -> token list function.

    The special segment markers must always survive as single tokens.
    ``tokenize("")`` is the empty list.
    """

    name: str
    tokenize: Callable[[str], list[str]] = field(repr=False)


def _whitespace_tokenize(text: str) -> list[str]:
    return text.split()


WHITESPACE = TokenizerContract(name="whitespace", tokenize=_whitespace_tokenize)

_TOKENIZERS = {WHITESPACE.name: WHITESPACE}


def register_tokenizer(tok: TokenizerContract) -> None:
    _TOKENIZERS[tok.name] = tok


def get_tokenizer(name: str) -> TokenizerContract:
    try:
        return _TOKENIZERS[name]
    except KeyError:
        raise KeyError(f"unknown tokenizer {name!r}; registered: {sorted(_TOKENIZERS)}") from None


def word_tokens(text: str) -> list[str]:
    """Lowercased alphanumeric terms for sparse scoring and statistics."""
    return _WORD_RE.findall(text.lower())
