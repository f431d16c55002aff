"""Passage and question storage plus the canonical tokenizer.

Every other module tokenizes through :func:`tokenize`; passages index
``title + " " + text`` so that title words are searchable.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path

# Maximal runs of Unicode alphanumerics (\w minus underscore). Everything
# else is a separator; no stemming, no stopwords.
_TOKEN_RE = re.compile(r"[^\W_]+")

QUESTION_TYPES = ("bridge", "comparison")


def tokenize(text: str) -> list[str]:
    """Lowercase ``text`` and split it into alphanumeric runs."""
    return _TOKEN_RE.findall(text.lower())


@dataclass(frozen=True)
class Passage:
    """One retrievable unit: id, title, body, and derived tokens."""

    id: str
    title: str
    text: str
    tokens: tuple[str, ...]

    @classmethod
    def build(cls, id: str, title: str, text: str) -> "Passage":
        return cls(id=id, title=title, text=text,
                   tokens=tuple(tokenize(title + " " + text)))


@dataclass(frozen=True)
class Question:
    """A 2-hop question with its ordered gold passage pair."""

    id: str
    text: str
    qtype: str
    gold_hop1: str
    gold_hop2: str

    def __post_init__(self) -> None:
        if self.qtype not in QUESTION_TYPES:
            raise ValueError(f"invalid question type {self.qtype!r}")
        if self.gold_hop1 == self.gold_hop2:
            raise ValueError(
                f"question {self.id}: gold_hop1 and gold_hop2 must differ")


@dataclass(frozen=True)
class CorpusStats:
    passage_count: int
    avg_doc_len: float
    vocab_size: int


@dataclass
class Corpus:
    """Immutable-after-ingestion collection of passages and questions."""

    passages: dict[str, Passage] = field(default_factory=dict)
    questions: list[Question] = field(default_factory=list)

    def __contains__(self, passage_id: str) -> bool:
        return passage_id in self.passages

    def __len__(self) -> int:
        return len(self.passages)

    def passage(self, passage_id: str) -> Passage:
        try:
            return self.passages[passage_id]
        except KeyError:
            raise KeyError(f"unknown passage id {passage_id!r}") from None

    def add_passage(self, passage: Passage) -> None:
        if passage.id in self.passages:
            raise ValueError(f"duplicate passage id {passage.id}")
        if not passage.id:
            raise ValueError("passage id must be non-empty")
        self.passages[passage.id] = passage

    def ingest_passages(self, path: str | Path) -> CorpusStats:
        """Load a passage JSONL file: one ``{"id","title","text"}`` per line.

        Blank lines are skipped; any other malformed line is an error that
        names the line number. Duplicate ids are an error.
        """
        for lineno, record in _iter_jsonl(path):
            try:
                pid, title, text = record["id"], record["title"], record["text"]
            except (KeyError, TypeError):
                raise ValueError(
                    f"{path}: line {lineno}: passage record needs "
                    f"'id', 'title' and 'text'") from None
            if not isinstance(pid, str) or not isinstance(title, str) \
                    or not isinstance(text, str):
                raise ValueError(
                    f"{path}: line {lineno}: id, title and text must be strings")
            self.add_passage(Passage.build(pid, title, text))
        return self.stats()

    def ingest_questions(self, path: str | Path) -> int:
        """Load a question JSONL file and validate golds against the corpus."""
        count = 0
        for lineno, record in _iter_jsonl(path):
            try:
                question = Question(
                    id=record["id"], text=record["text"], qtype=record["qtype"],
                    gold_hop1=record["gold_hop1"], gold_hop2=record["gold_hop2"])
            except (KeyError, TypeError):
                raise ValueError(
                    f"{path}: line {lineno}: question record needs 'id', "
                    f"'text', 'qtype', 'gold_hop1' and 'gold_hop2'") from None
            for gold in (question.gold_hop1, question.gold_hop2):
                if gold not in self.passages:
                    raise ValueError(
                        f"{path}: line {lineno}: unknown passage id {gold!r}")
            self.questions.append(question)
            count += 1
        return count

    def stats(self) -> CorpusStats:
        count = len(self.passages)
        total = sum(len(p.tokens) for p in self.passages.values())
        vocab: set[str] = set()
        for p in self.passages.values():
            vocab.update(p.tokens)
        return CorpusStats(
            passage_count=count,
            avg_doc_len=total / count if count else 0.0,
            vocab_size=len(vocab))


def _iter_jsonl(path: str | Path):
    """Yield (line number, parsed object) for every non-blank line."""
    with open(path, encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                yield lineno, json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}: line {lineno}: invalid JSON "
                                 f"({exc.msg})") from None
