"""Contrastive training of the two-tower encoder.

The objective is the negative log likelihood of each example's positive
passage against a candidate set shared across the whole batch: every
example's positive doubles as a negative for the others (in-batch
negatives), plus any explicitly mined hard negatives. The number of
negatives an example sees is therefore B - 1 + (hard negatives in the
batch), which depends on the real batch size B and never on gradient
accumulation: accumulation averages gradients over S consecutive batches
before one parameter update, simulating a large batch for the update but
not for the candidate sets.

Optimization is plain SGD with optional momentum; everything is seeded
and float64, so a (config, seed) pair reproduces the loss trace exactly.
"""

from __future__ import annotations

import json
import random
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus import Corpus, Question, tokenize
from .encoder import ToyEncoder, featurize
from .lexical import InvertedIndex

CHECKPOINT_MAGIC = b"HSCK1"


@dataclass(frozen=True)
class TrainExample:
    query_tokens: tuple[str, ...]
    positive_id: str
    hard_negative_ids: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if self.positive_id in self.hard_negative_ids:
            raise ValueError(
                f"positive passage {self.positive_id!r} listed as its own "
                f"hard negative")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int
    batch_size: int
    learning_rate: float
    grad_accum_steps: int = 1
    seed: int = 0
    momentum: float = 0.0

    def __post_init__(self) -> None:
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.grad_accum_steps < 1:
            raise ValueError("grad_accum_steps must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must be in [0, 1)")


def _gold_passage(corpus: Corpus, question_id: str, passage_id: str):
    try:
        return corpus.passages[passage_id]
    except KeyError:
        raise ValueError(
            f"question {question_id!r}: gold passage {passage_id!r} "
            f"not in corpus") from None


def _mine_hard_negative(index: InvertedIndex, query_tokens: Sequence[str],
                        banned: set[str]) -> tuple[str, ...]:
    # top lexical hit that is not a gold passage of the question; k covers
    # the worst case of both golds outranking every non-gold
    for pid, _ in index.search(list(query_tokens), k=len(banned) + 1):
        if pid not in banned:
            return (pid,)
    return ()


def build_hop1_dataset(questions: Sequence[Question], corpus: Corpus,
                       hard_negative_index: InvertedIndex | None = None,
                       ) -> list[TrainExample]:
    """First-hop examples: the bare question vs its first gold passage."""
    examples = []
    for q in questions:
        _gold_passage(corpus, q.id, q.gold_hop1)
        query_tokens = tuple(tokenize(q.text))
        hard: tuple[str, ...] = ()
        if hard_negative_index is not None:
            hard = _mine_hard_negative(hard_negative_index, query_tokens,
                                       {q.gold_hop1, q.gold_hop2})
        examples.append(TrainExample(query_tokens, q.gold_hop1, hard))
    return examples


def build_dpr2_dataset(questions: Sequence[Question], corpus: Corpus,
                       hard_negative_index: InvertedIndex | None = None,
                       ) -> list[TrainExample]:
    """Second-hop examples: question concatenated with the first-hop gold
    passage as the query, the second-hop gold as the only positive."""
    examples = []
    for q in questions:
        first = _gold_passage(corpus, q.id, q.gold_hop1)
        _gold_passage(corpus, q.id, q.gold_hop2)
        query_tokens = tuple(tokenize(q.text)) + first.tokens
        hard: tuple[str, ...] = ()
        if hard_negative_index is not None:
            hard = _mine_hard_negative(hard_negative_index, query_tokens,
                                       {q.gold_hop1, q.gold_hop2})
        examples.append(TrainExample(query_tokens, q.gold_hop2, hard))
    return examples


def candidate_ids(batch: Sequence[TrainExample]) -> list[str]:
    """Shared candidate pool: all batch positives, then all hard negatives.

    Duplicates between hard negatives (or between a hard negative and
    another example's positive) are kept as-is; duplicated positives are
    an error because a positive would silently become its own negative.
    """
    seen: set[str] = set()
    for ex in batch:
        if ex.positive_id in seen:
            raise ValueError(
                f"duplicate positive id {ex.positive_id!r} within a batch")
        seen.add(ex.positive_id)
    candidates = [ex.positive_id for ex in batch]
    for ex in batch:
        candidates.extend(ex.hard_negative_ids)
    return candidates


def nll_from_embeddings(queries: np.ndarray, candidates: np.ndarray,
                        positive_indices: Sequence[int],
                        ) -> tuple[float, np.ndarray, np.ndarray]:
    """NLL of each positive under a softmax over all candidates.

    Log-sum-exp is stabilized by subtracting the row max. Returns the
    batch mean, per-example losses, and the softmax matrix (reused by the
    backward pass).
    """
    Q = np.asarray(queries, dtype=np.float64)
    P = np.asarray(candidates, dtype=np.float64)
    logits = Q @ P.T
    row_max = logits.max(axis=1, keepdims=True)
    shifted = logits - row_max
    lse = row_max[:, 0] + np.log(np.exp(shifted).sum(axis=1))
    pos = np.asarray(positive_indices)
    per_example = lse - logits[np.arange(len(pos)), pos]
    softmax = np.exp(shifted - (lse - row_max[:, 0])[:, None])
    return float(per_example.mean()), per_example, softmax


def _passage_features(corpus: Corpus, passage_id: str,
                      hash_dim: int) -> np.ndarray:
    try:
        passage = corpus.passages[passage_id]
    except KeyError:
        raise ValueError(f"unknown passage id {passage_id!r}") from None
    return featurize(passage.tokens, hash_dim)


def _batch_features(batch: Sequence[TrainExample], corpus: Corpus,
                    hash_dim: int) -> tuple[np.ndarray, np.ndarray]:
    X = np.stack([featurize(ex.query_tokens, hash_dim) for ex in batch])
    Y = np.stack([_passage_features(corpus, pid, hash_dim)
                  for pid in candidate_ids(batch)])
    return X, Y


def _loss_and_grad(X: np.ndarray, Y: np.ndarray, w_query: np.ndarray,
                   w_passage: np.ndarray,
                   ) -> tuple[float, np.ndarray, np.ndarray, np.ndarray]:
    """Forward + analytic backward of the mean batch loss.

    With Q = X Wq^T, P = Y Wp^T, logits L = Q P^T and softmax S, the
    gradient of the mean loss is G = (S - onehot)/B pushed through the
    two linear maps: dWq = (G P)^T X and dWp = (G^T Q)^T Y.
    """
    Q = X @ w_query.T
    P = Y @ w_passage.T
    B = X.shape[0]
    mean, per_example, softmax = nll_from_embeddings(Q, P, range(B))
    G = softmax.copy()
    G[np.arange(B), np.arange(B)] -= 1.0
    G /= B
    grad_wq = (G @ P).T @ X
    grad_wp = (G.T @ Q).T @ Y
    return mean, per_example, grad_wq, grad_wp


def nll_loss(batch: Sequence[TrainExample], enc: ToyEncoder,
             corpus: Corpus) -> tuple[float, list[float]]:
    X, Y = _batch_features(batch, corpus, enc.hash_dim)
    Q = X @ enc.w_query.T
    P = Y @ enc.w_passage.T
    mean, per_example, _ = nll_from_embeddings(Q, P, range(len(batch)))
    return mean, per_example.tolist()


def grad(batch: Sequence[TrainExample], enc: ToyEncoder,
         corpus: Corpus) -> tuple[np.ndarray, np.ndarray]:
    X, Y = _batch_features(batch, corpus, enc.hash_dim)
    _, _, grad_wq, grad_wp = _loss_and_grad(X, Y, enc.w_query, enc.w_passage)
    return grad_wq, grad_wp


@dataclass(frozen=True)
class BatchStats:
    epoch: int
    batch_index: int
    batch_size: int
    candidate_count: int
    hard_negative_count: int
    loss: float


@dataclass(frozen=True)
class StepRecord:
    epoch: int
    step: int
    loss: float


@dataclass
class TrainResult:
    encoder: ToyEncoder
    steps: list[StepRecord]
    batch_stats: list[BatchStats]

    def epoch_mean_losses(self) -> dict[int, float]:
        sums: dict[int, float] = {}
        counts: dict[int, int] = {}
        for record in self.batch_stats:
            sums[record.epoch] = sums.get(record.epoch, 0.0) + record.loss
            counts[record.epoch] = counts.get(record.epoch, 0) + 1
        return {epoch: sums[epoch] / counts[epoch] for epoch in sums}


def train(examples: Sequence[TrainExample], corpus: Corpus,
          config: TrainConfig, encoder: ToyEncoder | None = None
          ) -> TrainResult:
    """Seeded epochs of shuffled batches with gradient accumulation.

    Each optimizer step averages the gradients of up to S consecutive
    batches, all evaluated at the same parameters; a trailing group
    shorter than S at the end of an epoch still flushes. Trailing
    examples that do not fill a batch are dropped for that epoch, since
    a smaller batch would change the negative count mid-stream.
    """
    examples = list(examples)
    if not examples:
        raise ValueError("no training examples")
    if config.batch_size > len(examples):
        raise ValueError(
            f"batch_size {config.batch_size} exceeds dataset size "
            f"{len(examples)}")
    if config.batch_size == 1 and \
            not any(ex.hard_negative_ids for ex in examples):
        raise ValueError(
            "batch_size 1 requires hard negatives; there are no "
            "in-batch negatives otherwise")
    if encoder is None:
        encoder = ToyEncoder(seed=config.seed)

    hash_dim = encoder.hash_dim
    query_feats = np.stack(
        [featurize(ex.query_tokens, hash_dim) for ex in examples])
    passage_feats: dict[str, np.ndarray] = {}
    for ex in examples:
        for pid in (ex.positive_id, *ex.hard_negative_ids):
            if pid not in passage_feats:
                passage_feats[pid] = _passage_features(corpus, pid, hash_dim)

    w_query = encoder.w_query.copy()
    w_passage = encoder.w_passage.copy()
    vel_q = np.zeros_like(w_query)
    vel_p = np.zeros_like(w_passage)

    rng = random.Random(config.seed)
    order = list(range(len(examples)))
    B, S = config.batch_size, config.grad_accum_steps
    steps: list[StepRecord] = []
    stats: list[BatchStats] = []
    step_no = 0

    for epoch in range(1, config.epochs + 1):
        rng.shuffle(order)
        n_batches = len(examples) // B
        acc_q = np.zeros_like(w_query)
        acc_p = np.zeros_like(w_passage)
        acc_losses: list[float] = []
        for batch_index in range(n_batches):
            selected = order[batch_index * B:(batch_index + 1) * B]
            batch = [examples[i] for i in selected]
            cids = candidate_ids(batch)
            X = query_feats[selected]
            Y = np.stack([passage_feats[pid] for pid in cids])
            loss, _, grad_wq, grad_wp = _loss_and_grad(
                X, Y, w_query, w_passage)
            hard_total = sum(len(ex.hard_negative_ids) for ex in batch)
            stats.append(BatchStats(epoch, batch_index, B, len(cids),
                                    hard_total, loss))
            acc_q += grad_wq
            acc_p += grad_wp
            acc_losses.append(loss)
            if len(acc_losses) == S or batch_index == n_batches - 1:
                count = len(acc_losses)
                mean_q = acc_q / count
                mean_p = acc_p / count
                if config.momentum > 0.0:
                    vel_q = config.momentum * vel_q + mean_q
                    vel_p = config.momentum * vel_p + mean_p
                    w_query = w_query - config.learning_rate * vel_q
                    w_passage = w_passage - config.learning_rate * vel_p
                else:
                    w_query = w_query - config.learning_rate * mean_q
                    w_passage = w_passage - config.learning_rate * mean_p
                step_no += 1
                steps.append(StepRecord(epoch, step_no,
                                        sum(acc_losses) / count))
                acc_q = np.zeros_like(w_query)
                acc_p = np.zeros_like(w_passage)
                acc_losses = []

    trained = ToyEncoder.from_weights(w_query, w_passage, seed=encoder.seed)
    return TrainResult(trained, steps, stats)


# ---------------------------------------------------------------------------
# Checkpoint format (see docs/formats.md):
#   magic "HSCK1" | u32le json length | json config echo
#   | embed_dim*hash_dim f32le (W_q, row-major) | same for W_p


def save_checkpoint(path: str | Path, encoder: ToyEncoder) -> None:
    echo = {"embed_dim": encoder.embed_dim, "hash_dim": encoder.hash_dim,
            "seed": encoder.seed}
    blob = json.dumps(echo, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as handle:
        handle.write(CHECKPOINT_MAGIC)
        handle.write(struct.pack("<I", len(blob)))
        handle.write(blob)
        handle.write(encoder.w_query.astype("<f4").tobytes())
        handle.write(encoder.w_passage.astype("<f4").tobytes())


def load_checkpoint(path: str | Path) -> ToyEncoder:
    data = Path(path).read_bytes()
    if data[:5] != CHECKPOINT_MAGIC:
        raise ValueError(f"bad magic in checkpoint {path}")
    if len(data) < 9:
        raise ValueError("truncated checkpoint header")
    (json_len,) = struct.unpack_from("<I", data, 5)
    offset = 9 + json_len
    if len(data) < offset:
        raise ValueError("truncated checkpoint header")
    try:
        echo = json.loads(data[9:offset])
        embed_dim = int(echo["embed_dim"])
        hash_dim = int(echo["hash_dim"])
        seed = int(echo["seed"])
    except (ValueError, KeyError, TypeError):
        raise ValueError("corrupt checkpoint header") from None
    block = embed_dim * hash_dim * 4
    if len(data) - offset != 2 * block:
        raise ValueError("checkpoint weight payload has the wrong size")
    w_query = np.frombuffer(data, dtype="<f4", count=embed_dim * hash_dim,
                            offset=offset).reshape(embed_dim, hash_dim)
    w_passage = np.frombuffer(data, dtype="<f4", count=embed_dim * hash_dim,
                              offset=offset + block).reshape(embed_dim,
                                                             hash_dim)
    return ToyEncoder.from_weights(w_query.astype(np.float64),
                                   w_passage.astype(np.float64), seed=seed)


def write_loss_trace(path: str | Path, steps: Sequence[StepRecord]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        handle.write("epoch,step,loss\n")
        for record in steps:
            handle.write(f"{record.epoch},{record.step},{record.loss!r}\n")
