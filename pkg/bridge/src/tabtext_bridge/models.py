"""Encoder backends for embedding export.

A model turns a token sequence into one d-dimensional state per token. The
built-in "hash-v1" backend hashes each token to a base vector, then mixes in
left and right context with geometric decay, so every state depends on the
whole sequence (as with a real contextual encoder) while staying
deterministic across processes and platforms with no weights on disk; it
exists to exercise the wire formats end to end. Real pretrained encoders
plug in through register_model with the same two-method surface (name
attribute, states(tokens) -> (len(tokens), dim) array) and bring their own
runtime.
"""

from __future__ import annotations

import hashlib

import numpy as np

CONTEXT_DECAY = 0.5    # weight of the neighboring state in each mixing pass


class HashEncoder:
    """Deterministic contextual states with dim floats roughly in [-2, 2].

    Base vectors come from a per-token hash; two scan passes (left-to-right
    and right-to-left) fold in decaying context so identical tokens get
    different states in different sequences, and identical sequences get
    identical states.
    """

    def __init__(self, dim: int):
        if dim < 1:
            raise ValueError(f"dim must be >= 1, got {dim}")
        self.dim = dim
        self.name = "hash-v1"
        self._cache: dict[str, np.ndarray] = {}

    def _base(self, token: str) -> np.ndarray:
        state = self._cache.get(token)
        if state is None:
            raw = hashlib.shake_128(token.encode("utf-8")).digest(4 * self.dim)
            words = np.frombuffer(raw, dtype="<u4").astype(np.float64)
            state = words / 2 ** 31 - 1.0
            self._cache[token] = state
        return state

    def states(self, tokens: list[str]) -> np.ndarray:
        if not tokens:
            raise ValueError("cannot encode an empty token sequence")
        base = np.stack([self._base(t) for t in tokens])
        left = base.copy()
        for i in range(1, len(tokens)):
            left[i] += CONTEXT_DECAY * left[i - 1]
        right = base.copy()
        for i in range(len(tokens) - 2, -1, -1):
            right[i] += CONTEXT_DECAY * right[i + 1]
        # each side contributes its context plus half the token itself
        return ((left + right - base) / 2).astype(np.float32)


_MODELS = {"hash-v1": HashEncoder}


def register_model(name: str, factory) -> None:
    """Add an encoder backend; factory(dim) must return a states() object."""
    _MODELS[name] = factory


def available_models() -> list[str]:
    return sorted(_MODELS)


def resolve_model(name: str, dim: int):
    factory = _MODELS.get(name)
    if factory is None:
        raise ValueError(
            f"unknown model {name!r}; available: {', '.join(available_models())}")
    return factory(dim)
