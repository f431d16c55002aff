"""Batch embedding export from pretrained transformer encoders.

Texts are encoded with mean pooling over the final hidden layer (padding
excluded via the attention mask) and L2-normalized by default, the usual
recipe for sentence-similarity checkpoints. Each distinct text is encoded
exactly once per export, so identical input lines always receive identical
vectors regardless of how batches were cut.
"""

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .hsem import read_header, write_hsem

SIDES = ("passage", "question", "question+prev")
DEFAULT_MODEL = "sentence-transformers/all-MiniLM-L6-v2"
DEFAULT_SEPARATOR = " | "
PAIR_ID_SEP = "||"


@dataclass(frozen=True)
class ExportJob:
    input_path: str
    output_path: str
    model_name: str = DEFAULT_MODEL
    side: str = "passage"
    batch_size: int = 32
    max_length: int = 256
    # passages file, required for side=question+prev: each question is
    # paired with its gold first-hop passage
    passages_path: str | None = None
    # existing HSEM1 file whose dimension the export must match
    companion_path: str | None = None
    separator: str = DEFAULT_SEPARATOR
    normalize: bool = True

    def __post_init__(self) -> None:
        if self.side not in SIDES:
            raise ValueError(f"side must be one of {SIDES}, got {self.side!r}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.max_length < 1:
            raise ValueError("max_length must be >= 1")
        if self.side == "question+prev" and self.passages_path is None:
            raise ValueError("side question+prev requires a passages file")


@dataclass(frozen=True)
class ExportSummary:
    rows_written: int
    dimension: int


def _read_jsonl(path: str | Path, required: tuple[str, ...]) -> list[dict]:
    records = []
    with open(path, "r", encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}: line {line_no}: {exc}") from None
            for field in required:
                if field not in record:
                    raise ValueError(
                        f"{path}: line {line_no}: missing field {field!r}")
            records.append(record)
    if not records:
        raise ValueError(f"{path}: no records")
    return records


def passage_text(record: dict) -> str:
    # title is part of the passage representation, same as the engine's
    # title-prepended tokenization
    return f"{record['title']} {record['text']}".strip()


def _rows_for_job(job: ExportJob) -> list[tuple[str, str]]:
    """(row id, text to encode) per input line, in input order."""
    if job.side == "passage":
        records = _read_jsonl(job.input_path, ("id", "title", "text"))
        return [(r["id"], passage_text(r)) for r in records]
    records = _read_jsonl(job.input_path, ("id", "text"))
    if job.side == "question":
        return [(r["id"], r["text"]) for r in records]
    passages = {r["id"]: r for r in _read_jsonl(
        job.passages_path, ("id", "title", "text"))}
    rows = []
    for r in records:
        prev_id = r.get("gold_hop1")
        if prev_id is None:
            raise ValueError(
                f"question {r['id']!r} has no gold_hop1 to pair with")
        if prev_id not in passages:
            raise ValueError(
                f"question {r['id']!r}: passage {prev_id!r} not in "
                f"{job.passages_path}")
        text = r["text"] + job.separator + passage_text(passages[prev_id])
        rows.append((f"{r['id']}{PAIR_ID_SEP}{prev_id}", text))
    return rows


class Encoder:
    """A pretrained transformer with mask-aware mean pooling."""

    def __init__(self, model_name: str, max_length: int,
                 normalize: bool = True):
        try:
            from transformers import AutoModel, AutoTokenizer
        except ImportError as exc:
            raise RuntimeError(f"transformers is not installed: {exc}")
        try:
            self.tokenizer = AutoTokenizer.from_pretrained(model_name)
            self.model = AutoModel.from_pretrained(model_name)
        except Exception as exc:
            raise RuntimeError(
                f"could not load model {model_name!r}: {exc}") from exc
        self.model.eval()
        self.max_length = max_length
        self.normalize = normalize
        self.dimension = int(self.model.config.hidden_size)

    def encode(self, texts: list[str], batch_size: int) -> np.ndarray:
        import torch

        chunks = []
        with torch.no_grad():
            for start in range(0, len(texts), batch_size):
                batch = texts[start:start + batch_size]
                tokens = self.tokenizer(
                    batch, padding=True, truncation=True,
                    max_length=self.max_length, return_tensors="pt")
                hidden = self.model(**tokens).last_hidden_state
                mask = tokens["attention_mask"].unsqueeze(-1).to(hidden.dtype)
                summed = (hidden * mask).sum(dim=1)
                counts = mask.sum(dim=1).clamp(min=1)
                pooled = summed / counts
                if self.normalize:
                    pooled = torch.nn.functional.normalize(pooled, dim=1)
                chunks.append(pooled.cpu().numpy())
        return np.concatenate(chunks, axis=0)


def export(job: ExportJob, encoder: Encoder | None = None) -> ExportSummary:
    rows = _rows_for_job(job)
    if encoder is None:
        encoder = Encoder(job.model_name, job.max_length, job.normalize)
    if job.companion_path is not None:
        companion_d, _ = read_header(job.companion_path)
        if companion_d != encoder.dimension:
            raise ValueError(
                f"model {job.model_name!r} produces {encoder.dimension}-d "
                f"vectors but {job.companion_path} holds {companion_d}-d "
                f"vectors")

    unique_texts = list(dict.fromkeys(text for _, text in rows))
    encoded = encoder.encode(unique_texts, job.batch_size)
    by_text = {text: encoded[i] for i, text in enumerate(unique_texts)}
    vectors = np.stack([by_text[text] for _, text in rows])
    write_hsem(job.output_path, [row_id for row_id, _ in rows], vectors)
    return ExportSummary(rows_written=len(rows), dimension=encoder.dimension)
