"""Two-stage retrieval: BM25 candidate generation, then pointwise rescoring.

The second-stage scorer is pluggable. Two implementations ship with the
package: OverlapScorer (IDF-weighted term overlap, zero external artifacts)
and ExternalScores (precomputed scores loaded from a TSV, the path for
plugging in a real cross-encoder's outputs). Candidates outside the BM25
top-k_candidates are unreachable by design.
"""

from __future__ import annotations

from pathlib import Path
from typing import Protocol

from .corpus import Corpus, Passage, Question, tokenize
from .lexical import InvertedIndex


class Scorer(Protocol):
    """Pointwise relevance scorer; must be deterministic for fixed inputs."""

    def score(self, question: Question, passage: Passage) -> float:
        ...


class OverlapScorer:
    """IDF-weighted term overlap: sum of IDF over shared unique terms."""

    def __init__(self, index: InvertedIndex):
        self.index = index

    def score(self, question: Question, passage: Passage) -> float:
        question_terms = set(tokenize(question.text))
        shared = question_terms & set(passage.tokens)
        return sum(self.index.idf(term) for term in shared)


class ExternalScores:
    """Scores keyed by (question id, passage id), loaded from a TSV file.

    A lookup outside the map is an error, never a silent zero: a missing
    pair means the score file does not cover the candidate pool.
    """

    def __init__(self, scores: dict[tuple[str, str], float]):
        self.scores = scores

    @classmethod
    def load(cls, path: str | Path) -> "ExternalScores":
        scores: dict[tuple[str, str], float] = {}
        with open(path, encoding="utf-8") as handle:
            for line_no, line in enumerate(handle, start=1):
                line = line.rstrip("\n")
                if not line:
                    continue
                fields = line.split("\t")
                if len(fields) != 3:
                    raise ValueError(
                        f"line {line_no}: expected 3 tab-separated fields, "
                        f"got {len(fields)}")
                question_id, passage_id, raw = fields
                try:
                    value = float(raw)
                except ValueError:
                    raise ValueError(
                        f"line {line_no}: invalid score {raw!r}") from None
                key = (question_id, passage_id)
                if key in scores:
                    raise ValueError(
                        f"line {line_no}: duplicate score for question "
                        f"{question_id!r} passage {passage_id!r}")
                scores[key] = value
        return cls(scores)

    def score(self, question: Question, passage: Passage) -> float:
        try:
            return self.scores[(question.id, passage.id)]
        except KeyError:
            raise KeyError(
                f"no external score for question {question.id!r} "
                f"passage {passage.id!r}") from None


def rerank(question: Question, index: InvertedIndex, corpus: Corpus,
           scorer: Scorer, k_out: int,
           k_candidates: int = 100) -> list[tuple[str, float]]:
    """BM25 top-k_candidates rescored by `scorer`, best k_out returned.

    Output is sorted by scorer score descending; ties fall back to the
    BM25 score (descending) and then ascending passage id. Returned scores
    are the scorer's, not BM25's.
    """
    if k_out < 1:
        raise ValueError("k_out must be >= 1")
    if k_out > k_candidates:
        raise ValueError(
            f"k_out ({k_out}) must not exceed k_candidates ({k_candidates})")
    candidates = index.search(tokenize(question.text), k_candidates)
    rescored = []
    for passage_id, bm25_score in candidates:
        passage = corpus.passages[passage_id]
        rescored.append((passage_id, scorer.score(question, passage), bm25_score))
    rescored.sort(key=lambda item: (-item[1], -item[2], item[0]))
    return [(passage_id, new_score)
            for passage_id, new_score, _ in rescored[:k_out]]
