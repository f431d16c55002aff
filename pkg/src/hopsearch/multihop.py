"""Two-hop retrieval orchestration.

Two retrieval strategies over the same path abstraction:

* mdr_retrieve: dense beam search. Hop-2 queries re-encode the question
  together with the hop-1 passage; paths are scored by the sum of the two
  inner products.
* hybrid_retrieve: BM25+rerank for hop 1, a second-hop dense retriever for
  hop 2, fused by per-question min-max normalization of each hop's scores.

Paths never repeat a passage (a 2-hop path with a repeated passage cannot
contain both golds), and hop-2 search always excludes the hop-1 passage.
Hop count is fixed at two throughout.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from .corpus import Corpus, Question
from .dense import DenseIndex
from .encoder import EmbeddingMatrix, ToyEncoder
from .lexical import InvertedIndex
from .rerank import Scorer, rerank

# id convention for precomputed hop-2 query vectors: question id and
# hop-1 passage id joined by a separator that plain ids never contain
HOP2_ID_SEP = "||"


@dataclass(frozen=True)
class PathCandidate:
    """An ordered 2-hop passage chain with per-hop and total scores."""

    hop_passages: tuple[str, ...]
    hop_scores: tuple[float, ...]
    total_score: float

    def __post_init__(self) -> None:
        if len(self.hop_passages) != len(self.hop_scores):
            raise ValueError("one score per hop required")
        if len(set(self.hop_passages)) != len(self.hop_passages):
            raise ValueError(
                f"path repeats a passage: {self.hop_passages}")
        if self.total_score != sum(self.hop_scores):
            raise ValueError("total_score must equal the sum of hop_scores")

    @classmethod
    def from_hops(cls, passages: Sequence[str],
                  scores: Sequence[float]) -> "PathCandidate":
        scores = tuple(float(s) for s in scores)
        return cls(hop_passages=tuple(passages), hop_scores=scores,
                   total_score=sum(scores))


class QueryEncoder(Protocol):
    """Produces hop-1 and hop-2 query vectors for a question."""

    def query_vector(self, question: Question) -> np.ndarray:
        ...

    def hop2_query_vector(self, question: Question,
                          prev_id: str) -> np.ndarray:
        ...


class ToyQueryEncoder:
    """Encodes queries on the fly with a trained (or fresh) ToyEncoder."""

    def __init__(self, encoder: ToyEncoder, corpus: Corpus):
        self.encoder = encoder
        self.corpus = corpus

    def query_vector(self, question: Question) -> np.ndarray:
        return self.encoder.encode_query(question)

    def hop2_query_vector(self, question: Question,
                          prev_id: str) -> np.ndarray:
        try:
            prev = self.corpus.passages[prev_id]
        except KeyError:
            raise KeyError(f"unknown passage id {prev_id!r}") from None
        return self.encoder.encode_query(question, prev)


class PrecomputedQueryVectors:
    """Query vectors loaded from embedding files instead of computed.

    Hop-1 rows are keyed by question id; hop-2 rows by
    `question_id + "||" + hop1_passage_id`. Missing rows are an error,
    never a zero vector.
    """

    def __init__(self, hop1: EmbeddingMatrix,
                 hop2: EmbeddingMatrix | None = None):
        self.hop1 = hop1
        self.hop2 = hop2

    def query_vector(self, question: Question) -> np.ndarray:
        return self.hop1.row(question.id)

    def hop2_query_vector(self, question: Question,
                          prev_id: str) -> np.ndarray:
        if self.hop2 is None:
            raise KeyError("no hop-2 query vectors were loaded")
        return self.hop2.row(f"{question.id}{HOP2_ID_SEP}{prev_id}")


def mdr_retrieve(question: Question, beam_size: int, k_paths: int,
                 enc: QueryEncoder, index: DenseIndex) -> list[PathCandidate]:
    """Dense beam search over 2-hop paths.

    Hop 1 takes the top-`beam_size` passages for the question vector; for
    each, hop 2 searches with the question re-encoded against that passage,
    excluding it. All surviving pairs are ranked by summed inner product,
    ties by (hop1 id, hop2 id) ascending. A beam wider than the corpus
    simply truncates, which makes the search exhaustive.
    """
    if beam_size < 1:
        raise ValueError("beam_size must be >= 1")
    if k_paths < 1:
        raise ValueError("k_paths must be >= 1")
    if k_paths > beam_size * beam_size:
        raise ValueError(
            f"k_paths ({k_paths}) exceeds beam_size^2 ({beam_size ** 2})")
    if len(index) == 0:
        raise ValueError("cannot retrieve from an empty index")
    hop1_hits = index.search(enc.query_vector(question), beam_size)
    paths = []
    for hop1_id, hop1_score in hop1_hits:
        hop2_vec = enc.hop2_query_vector(question, hop1_id)
        for hop2_id, hop2_score in index.search(hop2_vec, beam_size,
                                                exclude={hop1_id}):
            paths.append(PathCandidate.from_hops(
                (hop1_id, hop2_id), (hop1_score, hop2_score)))
    paths.sort(key=lambda p: (-p.total_score, p.hop_passages))
    return paths[:k_paths]


def _min_max(values: Sequence[float]) -> list[float]:
    # degenerate spread (all values equal, including a single value)
    # normalizes to 1.0 so the other hop alone decides the ranking
    lo, hi = min(values), max(values)
    if hi == lo:
        return [1.0] * len(values)
    return [(v - lo) / (hi - lo) for v in values]


def hybrid_retrieve(question: Question, b1: int, b2: int, scorer: Scorer,
                    dpr2_enc: QueryEncoder, dense_index: DenseIndex,
                    lexical_index: InvertedIndex, corpus: Corpus,
                    k_candidates: int = 100) -> list[PathCandidate]:
    """Rerank for hop 1, second-hop dense retrieval for hop 2, fused.

    Each hop's scores are min-max normalized to [0,1] per question (hop 1
    over the b1 reranked candidates; hop 2 jointly over all b1*b2 inner
    products), and a path scores z1 + z2. Ties break by hop-1 rank, then
    ascending hop-2 id.
    """
    if b1 < 1 or b2 < 1:
        raise ValueError("b1 and b2 must be >= 1")
    hop1_hits = rerank(question, lexical_index, corpus, scorer,
                       k_out=b1, k_candidates=k_candidates)
    branches = []  # (hop1_rank, hop1_id, hop2_id, raw hop2 score)
    for hop1_rank, (hop1_id, _) in enumerate(hop1_hits):
        hop2_vec = dpr2_enc.hop2_query_vector(question, hop1_id)
        for hop2_id, hop2_score in dense_index.search(hop2_vec, b2,
                                                      exclude={hop1_id}):
            branches.append((hop1_rank, hop1_id, hop2_id, hop2_score))
    if not branches:
        return []
    z1 = _min_max([score for _, score in hop1_hits])
    z2 = _min_max([raw for *_, raw in branches])
    scored = sorted(
        ((z1[rank] + z2[i], rank, hop1_id, hop2_id, z2[i])
         for i, (rank, hop1_id, hop2_id, _) in enumerate(branches)),
        key=lambda row: (-row[0], row[1], row[3]))
    return [PathCandidate.from_hops((hop1_id, hop2_id), (z1[rank], z2_val))
            for _, rank, hop1_id, hop2_id, z2_val in scored]


def flatten_paths_with_scores(paths: Sequence[PathCandidate],
                              k: int) -> list[tuple[str, float]]:
    """Ranked paths to a ranked passage list: interleave hops, dedup, cut at k.

    Each passage carries the total score of the path that first emitted
    it, which is what run files record for path-based methods.
    """
    rows: list[tuple[str, float]] = []
    seen: set[str] = set()
    for path in paths:
        for passage_id in path.hop_passages:
            if passage_id not in seen:
                seen.add(passage_id)
                rows.append((passage_id, path.total_score))
                if len(rows) == k:
                    return rows
    return rows[:max(k, 0)]


def flatten_paths(paths: Sequence[PathCandidate], k: int) -> list[str]:
    return [passage_id for passage_id, _ in flatten_paths_with_scores(paths, k)]


def write_run_file(path: str | Path,
                   results: dict[str, list[tuple[str, float]]],
                   run_tag: str) -> None:
    """One `qid \\t pid \\t rank \\t score \\t tag` line per retrieved passage."""
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        for question_id, ranking in results.items():
            for rank, (passage_id, score) in enumerate(ranking, start=1):
                handle.write(f"{question_id}\t{passage_id}\t{rank}\t"
                             f"{score!r}\t{run_tag}\n")


def write_paths_file(path: str | Path,
                     results: dict[str, list[PathCandidate]]) -> None:
    """JSONL debugging dump: one line per question with hop-level scores."""
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        for question_id, paths in results.items():
            record = {
                "question_id": question_id,
                "paths": [{"passages": list(p.hop_passages),
                           "scores": list(p.hop_scores),
                           "total": p.total_score} for p in paths],
            }
            handle.write(json.dumps(record, sort_keys=True) + "\n")
