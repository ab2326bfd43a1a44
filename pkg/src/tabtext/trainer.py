"""Contrastive training: in-batch negatives plus one hard negative per item.

For a batch of B (question, positive, hard negative) triples, each question
scores a shared candidate pool and pays softmax cross-entropy against its own
positive. Two candidate conventions exist:

* all: every positive and every hard negative in the batch (2B candidates,
  m = 2B-1 negatives per question); the default, matching common
  dense-retrieval practice.
* own: the B positives plus only the question's own hard negative
  (m = B negatives per question).

The optimizer is plain gradient descent with a linear warmup / linear decay
schedule. All math runs in float64; parameters snap to float32 at every epoch
boundary (checkpoint precision) and each epoch's shuffle is keyed by
(seed, epoch), so a run resumed from a checkpoint continues bit-identically.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .blocks import FlattenedBlock, flatten, truncate
from .corpus import Question
from .encoder import (EncoderParams, Grads, encode_flat, encode_tokens,
                      encoder_backward, load_params, pool_backward,
                      pool_with_cache, save_params)
from .negatives import TrainInstance
from .tokenizer import TokenizerContract, WHITESPACE

CONVENTIONS = ("all", "own")


class TrainingDiverged(RuntimeError):
    def __init__(self, message: str, epoch: int | None = None,
                 step: int | None = None, loss: float | None = None):
        super().__init__(message)
        self.epoch = epoch
        self.step = step
        self.loss = loss


@dataclass
class TrainConfig:
    batch_size: int = 8
    epochs: int = 10
    lr: float = 0.5
    warmup: float = 0.1          # fraction of total steps spent ramping up
    seed: int = 0
    negatives: str = "all"       # candidate convention, see module docstring
    shared: bool = True          # one encoder for questions and blocks
    budget_block: int = 512
    budget_question: int = 70
    divergence_loss: float = 1e3

    def validate(self) -> None:
        if self.batch_size < 2:
            raise ValueError(f"batch_size must be >= 2, got {self.batch_size}")
        if self.lr < 0:
            raise ValueError(f"lr must be >= 0, got {self.lr}")
        if not 0.0 <= self.warmup < 1.0:
            raise ValueError(f"warmup must be in [0, 1), got {self.warmup}")
        if self.negatives not in CONVENTIONS:
            raise ValueError(f"negatives must be one of {CONVENTIONS}")
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")

    def m(self) -> int:
        """Effective negatives per question at the nominal batch size."""
        return 2 * self.batch_size - 1 if self.negatives == "all" else self.batch_size


@dataclass
class Dual:
    """Question and block encoders; ``q is b`` when parameters are shared."""

    q: EncoderParams
    b: EncoderParams

    @property
    def shared(self) -> bool:
        return self.q is self.b

    def round_f32(self) -> None:
        self.q.round_f32()
        if not self.shared:
            self.b.round_f32()


def make_dual(params: EncoderParams, shared: bool = True) -> Dual:
    return Dual(params, params) if shared else Dual(params.copy(), params.copy())


def question_suffix(path: str | Path) -> Path:
    return Path(str(path) + ".q")


def save_dual(dual: Dual, path: str | Path) -> None:
    save_params(dual.b, path)
    if not dual.shared:
        save_params(dual.q, question_suffix(path))


def load_dual(path: str | Path, shared: bool = True) -> Dual:
    b = load_params(path)
    if shared:
        return Dual(b, b)
    return Dual(load_params(question_suffix(path)), b)


# ---------------------------------------------------------------------------
# batch items


@dataclass(frozen=True)
class TrainItem:
    q_tokens: tuple[str, ...]
    pos: FlattenedBlock
    neg: FlattenedBlock


def prepare_items(instances: Sequence[TrainInstance],
                  questions: dict[str, Question],
                  flats: dict[str, FlattenedBlock],
                  tokenizer: TokenizerContract = WHITESPACE,
                  budget_block: int = 512,
                  budget_question: int = 70) -> list[TrainItem]:
    """Resolve instances to encoder-ready triples, applying both budgets."""
    items = []
    for inst in instances:
        if inst.question_text is not None:
            text = inst.question_text
        else:
            question = questions.get(inst.question_id)
            if question is None:
                raise ValueError(f"instance references unknown question "
                                 f"{inst.question_id!r} and carries no text")
            text = question.text
        q_tokens = tuple(tokenizer.tokenize(text)[:budget_question])
        if not q_tokens:
            raise ValueError(f"question {inst.question_id!r} has no tokens")
        pos = flats.get(inst.positive_block_id)
        if pos is None:
            raise ValueError(f"instance references unknown block "
                             f"{inst.positive_block_id!r}")
        pos = truncate(pos, budget_block, tokenizer)
        neg = truncate(flatten(inst.negative, tokenizer), budget_block, tokenizer)
        items.append(TrainItem(q_tokens, pos, neg))
    return items


# ---------------------------------------------------------------------------
# loss


def loss_from_scores(S: np.ndarray, pos_cols: np.ndarray
                     ) -> tuple[float, np.ndarray]:
    """Mean softmax cross-entropy over rows; returns (loss, dL/dS)."""
    B = S.shape[0]
    M = S.max(axis=1, keepdims=True)
    lse = M[:, 0] + np.log(np.exp(S - M).sum(axis=1))
    loss = float(np.mean(lse - S[np.arange(B), pos_cols]))
    G = np.exp(S - lse[:, None])
    G[np.arange(B), pos_cols] -= 1.0
    return loss, G / B


def _question_grad_to_hidden(G_q: np.ndarray, d: int, strategy: str,
                             T: int) -> np.ndarray:
    """Replication makes dL/dh_0 the sum of the three thirds."""
    G_h = np.zeros((T, d))
    if strategy == "cls":
        G_h[0] = G_q
    else:
        G_h[0] = G_q[:d] + G_q[d:2 * d] + G_q[2 * d:]
    return G_h


def batch_loss(dual: Dual, items: Sequence[TrainItem], convention: str = "all",
               tokenizer: TokenizerContract = WHITESPACE,
               need_grads: bool = True
               ) -> tuple[float, Grads | None, Grads | None]:
    """Loss and parameter gradients for one batch.

    Gradients come back separately for the question and block encoders; a
    shared Dual applies their sum to its single parameter set.
    """
    if convention not in CONVENTIONS:
        raise ValueError(f"unknown candidate convention {convention!r}")
    if dual.q.strategy != dual.b.strategy:
        raise ValueError("question and block encoders disagree on strategy")
    strategy = dual.b.strategy
    d = dual.b.d
    B = len(items)
    if B == 0:
        raise ValueError("empty batch")

    q_hiddens = [encode_tokens(dual.q, list(it.q_tokens)) for it in items]
    if strategy == "cls":
        Q = np.stack([h.H[0] for h in q_hiddens])
    else:
        Q = np.stack([np.tile(h.H[0], 3) for h in q_hiddens])

    cand_flats = [it.pos for it in items] + [it.neg for it in items]
    cand_hiddens = []
    cand_caches = []
    C = np.zeros((2 * B, Q.shape[1]))
    for j, flat in enumerate(cand_flats):
        hidden = encode_flat(dual.b, flat, tokenizer)
        vec, cache = pool_with_cache(hidden, strategy, dual.b.w_att)
        cand_hiddens.append(hidden)
        cand_caches.append(cache)
        C[j] = vec

    if convention == "all":
        S = Q @ C.T                                   # (B, 2B)
    else:
        own = np.einsum("ij,ij->i", Q, C[B:])
        S = np.concatenate([Q @ C[:B].T, own[:, None]], axis=1)   # (B, B+1)
    loss, G_S = loss_from_scores(S, np.arange(B))
    if not np.isfinite(loss):
        raise TrainingDiverged(f"non-finite batch loss {loss!r}", loss=loss)
    if not need_grads:
        return loss, None, None

    if convention == "all":
        G_Q = G_S @ C
        G_C = G_S.T @ Q
    else:
        G_Q = G_S[:, :B] @ C[:B] + G_S[:, B][:, None] * C[B:]
        G_C = np.concatenate([G_S[:, :B].T @ Q, G_S[:, B][:, None] * Q], axis=0)

    gq = Grads.zeros_like(dual.q)
    gb = Grads.zeros_like(dual.b)
    for i, hidden in enumerate(q_hiddens):
        G_h = _question_grad_to_hidden(G_Q[i], d, strategy, len(hidden))
        encoder_backward(dual.q, hidden, G_h, gq)
    for j, hidden in enumerate(cand_hiddens):
        G_h, g_w = pool_backward(hidden, cand_caches[j], G_C[j], dual.b.w_att)
        encoder_backward(dual.b, hidden, G_h, gb)
        gb.w_att += g_w
    return loss, gq, gb


# ---------------------------------------------------------------------------
# gradient check


def grad_check(dual: Dual, items: Sequence[TrainItem], epsilon: float = 1e-4,
               n_coords: int = 120, seed: int = 0,
               convention: str = "all") -> float:
    """Max relative error, analytic vs central finite differences.

    Samples coordinates across every parameter array of every encoder copy.
    Caveat: max pooling is piecewise; if a +/-epsilon nudge flips an argmax
    the finite difference straddles a kink and overstates the error. Use a
    fixture whose maxima are not near ties when checking that strategy.
    """
    if not 1e-6 <= epsilon <= 1e-3:
        raise ValueError(f"epsilon {epsilon} outside [1e-6, 1e-3]")
    _, gq, gb = batch_loss(dual, items, convention)
    if dual.shared:
        arrays = [(getattr(dual.q, name), getattr(gq, name) + getattr(gb, name))
                  for name in ("E", "A", "P", "w_att")]
    else:
        arrays = [(getattr(dual.q, name), getattr(gq, name))
                  for name in ("E", "A", "P", "w_att")]
        arrays += [(getattr(dual.b, name), getattr(gb, name))
                   for name in ("E", "A", "P", "w_att")]
    sizes = np.array([a.size for a, _ in arrays])
    rng = np.random.default_rng(seed)
    picks = rng.integers(0, sizes.sum(), size=max(n_coords, 100))
    bounds = np.cumsum(sizes)
    worst = 0.0
    for pick in picks:
        which = int(np.searchsorted(bounds, pick, side="right"))
        offset = int(pick - (bounds[which - 1] if which else 0))
        arr, grad = arrays[which]
        analytic = grad.flat[offset]
        orig = arr.flat[offset]
        arr.flat[offset] = orig + epsilon
        up, _, _ = batch_loss(dual, items, convention, need_grads=False)
        arr.flat[offset] = orig - epsilon
        down, _, _ = batch_loss(dual, items, convention, need_grads=False)
        arr.flat[offset] = orig
        fd = (up - down) / (2 * epsilon)
        # floor keeps near-zero coordinates from reading FD round-off
        # (|noise| ~ loss * eps_machine / epsilon) as relative error
        err = abs(analytic - fd) / max(abs(analytic), abs(fd), 1e-6)
        worst = max(worst, err)
    return worst


# ---------------------------------------------------------------------------
# training loop


@dataclass
class TrainResult:
    dual: Dual
    rows: list[tuple[int, int, float]]       # (epoch, global step, batch loss)
    epoch_means: list[tuple[int, float]]
    best_epoch: int
    best_loss: float
    total_steps: int
    m: int
    n_items: int


def lr_at(step: int, total_steps: int, base_lr: float, warmup: float) -> float:
    """Linear ramp over the warmup fraction, then linear decay toward zero."""
    if total_steps <= 0:
        return 0.0
    warm = int(round(warmup * total_steps))
    if step < warm:
        return base_lr * (step + 1) / warm
    return base_lr * (total_steps - step) / max(1, total_steps - warm)


def _apply(dual: Dual, gq: Grads, gb: Grads, lr: float) -> None:
    for name in ("E", "A", "P", "w_att"):
        if dual.shared:
            param = getattr(dual.q, name)
            param -= lr * (getattr(gq, name) + getattr(gb, name))
        else:
            param_q = getattr(dual.q, name)
            param_q -= lr * getattr(gq, name)
            param_b = getattr(dual.b, name)
            param_b -= lr * getattr(gb, name)


def train(config: TrainConfig, items: Sequence[TrainItem], dual: Dual,
          checkpoint_path: str | Path | None = None, start_epoch: int = 0,
          end_epoch: int | None = None,
          tokenizer: TokenizerContract = WHITESPACE) -> TrainResult:
    """Run (or resume) the descent loop; deterministic given (config, items).

    ``start_epoch``/``end_epoch`` bound the epochs actually executed while the
    learning-rate schedule always spans config.epochs, so a resumed run
    replays the exact remaining schedule. On divergence the last good
    parameters are checkpointed and TrainingDiverged raised.
    """
    config.validate()
    if not items:
        raise ValueError("no training items")
    end_epoch = config.epochs if end_epoch is None else end_epoch
    n = len(items)
    B = config.batch_size
    batches_per_epoch = (n + B - 1) // B
    total_steps = config.epochs * batches_per_epoch

    dual.round_f32()
    rows: list[tuple[int, int, float]] = []
    epoch_means: list[tuple[int, float]] = []
    best_epoch, best_loss = -1, float("inf")
    step = start_epoch * batches_per_epoch
    for epoch in range(start_epoch, end_epoch):
        order = np.random.default_rng((config.seed, epoch)).permutation(n)
        losses = []
        for j in range(batches_per_epoch):
            batch = [items[t] for t in order[j * B:(j + 1) * B]]
            try:
                loss, gq, gb = batch_loss(dual, batch, config.negatives, tokenizer)
            except TrainingDiverged as e:
                _abort(dual, checkpoint_path)
                raise TrainingDiverged(str(e), epoch, step, e.loss) from None
            if loss > config.divergence_loss:
                _abort(dual, checkpoint_path)
                raise TrainingDiverged(
                    f"loss {loss:.3e} above divergence threshold "
                    f"{config.divergence_loss:.1e} at epoch {epoch} step {step}",
                    epoch, step, loss)
            _apply(dual, gq, gb, lr_at(step, total_steps, config.lr, config.warmup))
            rows.append((epoch, step, loss))
            losses.append(loss)
            step += 1
        dual.round_f32()
        mean = float(np.mean(losses))
        epoch_means.append((epoch, mean))
        if mean < best_loss:
            best_epoch, best_loss = epoch, mean
            if checkpoint_path is not None:
                save_dual(dual, best_path(checkpoint_path))
    if checkpoint_path is not None:
        save_dual(dual, checkpoint_path)
    return TrainResult(dual, rows, epoch_means, best_epoch, best_loss,
                       total_steps, config.m(), n)


def best_path(checkpoint_path: str | Path) -> Path:
    return Path(str(checkpoint_path) + ".best")


def _abort(dual: Dual, checkpoint_path: str | Path | None) -> None:
    dual.round_f32()
    if checkpoint_path is not None:
        save_dual(dual, checkpoint_path)


# ---------------------------------------------------------------------------
# loss curve file


def write_losscurve(path: str | Path, rows: Sequence[tuple[int, int, float]],
                    meta: dict | None = None) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for key, value in (meta or {}).items():
            f.write(f"# {key}: {value}\n")
        f.write("epoch,step,loss\n")
        for epoch, step, loss in rows:
            f.write(f"{epoch},{step},{loss!r}\n")


def read_losscurve(path: str | Path) -> list[tuple[int, int, float]]:
    rows = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("#") or line.startswith("epoch"):
                continue
            epoch, step, loss = line.split(",")
            rows.append((int(epoch), int(step), float(loss)))
    return rows
