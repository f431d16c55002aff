"""Passage Exact Match at k over retrieval run files.

EM@k for a question is 1 iff both gold passages appear within the first
min(k, retrieved) entries of its ranking, else 0; the report averages over
every question in the question set. A question absent from a run scores 0
at every k rather than being skipped, so partial runs cannot inflate the
mean. compare_runs buckets questions by which of two runs solved them,
the per-question diff behind win/loss analyses.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .corpus import Question

DEFAULT_KS = (2, 10, 20)

NOT_RETRIEVED = "not retrieved"


def em_at_k(retrieved: Sequence[str], golds: tuple[str, str], k: int) -> int:
    """1 iff both golds are in the top min(k, len(retrieved)) entries."""
    first, second = golds
    if first == second:
        raise ValueError("gold passages must be distinct")
    window = retrieved[:k] if k >= 0 else []
    return int(first in window and second in window)


def read_run_file(path: str | Path) -> dict[str, list[tuple[str, int, float]]]:
    """Parse a run file into qid -> [(passage id, rank, score)], rank order.

    Lines are `qid \\t pid \\t rank \\t score \\t tag`. Malformed lines,
    duplicate ranks, and duplicate passages per question are errors.
    """
    runs: dict[str, list[tuple[str, int, float]]] = {}
    seen_pairs: set[tuple[str, str]] = set()
    seen_ranks: set[tuple[str, int]] = set()
    with open(path, encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            fields = line.split("\t")
            if len(fields) != 5:
                raise ValueError(
                    f"line {line_no}: expected 5 tab-separated fields, "
                    f"got {len(fields)}")
            question_id, passage_id, rank_raw, score_raw, _tag = fields
            try:
                rank = int(rank_raw)
            except ValueError:
                raise ValueError(
                    f"line {line_no}: invalid rank {rank_raw!r}") from None
            if rank < 1:
                raise ValueError(f"line {line_no}: rank must be >= 1")
            try:
                score = float(score_raw)
            except ValueError:
                raise ValueError(
                    f"line {line_no}: invalid score {score_raw!r}") from None
            if (question_id, passage_id) in seen_pairs:
                raise ValueError(
                    f"line {line_no}: duplicate passage {passage_id!r} "
                    f"for question {question_id!r}")
            if (question_id, rank) in seen_ranks:
                raise ValueError(
                    f"line {line_no}: duplicate rank {rank} "
                    f"for question {question_id!r}")
            seen_pairs.add((question_id, passage_id))
            seen_ranks.add((question_id, rank))
            runs.setdefault(question_id, []).append(
                (passage_id, rank, score))
    for ranking in runs.values():
        ranking.sort(key=lambda entry: entry[1])
    return runs


@dataclass
class EvalReport:
    em_at: dict[int, float]
    per_question: dict[str, dict]

    def to_json(self) -> str:
        payload = {
            "em_at": {str(k): value for k, value in self.em_at.items()},
            "per_question": self.per_question,
        }
        return json.dumps(payload, sort_keys=True, indent=2) + "\n"

    def to_table(self) -> str:
        lines = [f"EM@{k} = {self.em_at[k]:.3f}"
                 for k in sorted(self.em_at)]
        return "\n".join(lines) + "\n"


def evaluate_run(run_path: str | Path, questions: Sequence[Question],
                 ks: Sequence[int] = DEFAULT_KS) -> EvalReport:
    runs = read_run_file(run_path)
    known = {q.id for q in questions}
    for question_id in runs:
        if question_id not in known:
            raise ValueError(
                f"run file references unknown question id {question_id!r}")
    per_question: dict[str, dict] = {}
    totals = {k: 0 for k in ks}
    for q in questions:
        ranking = runs.get(q.id, [])
        retrieved = [pid for pid, _, _ in ranking]
        rank_of = {pid: rank for pid, rank, _ in ranking}
        bits = {k: em_at_k(retrieved, (q.gold_hop1, q.gold_hop2), k)
                for k in ks}
        for k in ks:
            totals[k] += bits[k]
        per_question[q.id] = {
            "em": {str(k): bits[k] for k in ks},
            "gold_ranks": {
                gold: rank_of.get(gold, NOT_RETRIEVED)
                for gold in (q.gold_hop1, q.gold_hop2)},
        }
    if not questions:
        raise ValueError("no questions to evaluate")
    count = len(questions)
    return EvalReport(em_at={k: totals[k] / count for k in ks},
                      per_question=per_question)


def compare_runs(run_a: str | Path, run_b: str | Path,
                 questions: Sequence[Question],
                 k: int) -> list[tuple[str, str]]:
    """Per-question EM@k diff of two runs: A-only, B-only, both, neither."""
    report_a = evaluate_run(run_a, questions, ks=(k,))
    report_b = evaluate_run(run_b, questions, ks=(k,))
    categories = []
    for question_id in sorted(q.id for q in questions):
        a = report_a.per_question[question_id]["em"][str(k)]
        b = report_b.per_question[question_id]["em"][str(k)]
        if a and b:
            category = "both"
        elif a:
            category = "A-only"
        elif b:
            category = "B-only"
        else:
            category = "neither"
        categories.append((question_id, category))
    return categories
