"""Hashing dual encoder and the embedding-matrix file format.

Texts become V-dimensional signed hash features (64-bit FNV-1a buckets,
sign from the hash's top bit), L2-normalized, then projected by one of
two linear maps: W_q for queries, W_p for passages. Similarity is the
raw inner product. The projections are the trainable parameters.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import Corpus, Passage, Question, tokenize
from .prng import Xoshiro256StarStar

EMBEDDINGS_MAGIC = b"HSEM1"

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1

_hash_cache: dict[str, int] = {}


def fnv1a64(token: str) -> int:
    """64-bit FNV-1a of the token's UTF-8 bytes."""
    cached = _hash_cache.get(token)
    if cached is not None:
        return cached
    value = _FNV_OFFSET
    for byte in token.encode("utf-8"):
        value = ((value ^ byte) * _FNV_PRIME) & _MASK64
    _hash_cache[token] = value
    return value


def featurize(tokens, hash_dim: int) -> np.ndarray:
    """Signed hashed bag-of-words, scaled by 1/sqrt(len) then L2-normalized.

    Bucket = hash mod hash_dim; sign = +1 when the top hash bit is 0,
    else -1. A fully cancelled (all-zero) feature vector stays zero.
    """
    if not tokens:
        raise ValueError("cannot featurize an empty token sequence")
    features = np.zeros(hash_dim, dtype=np.float64)
    for token in tokens:
        value = fnv1a64(token)
        sign = 1.0 if (value >> 63) == 0 else -1.0
        features[value % hash_dim] += sign
    features /= math.sqrt(len(tokens))
    norm = np.linalg.norm(features)
    if norm > 0.0:
        features /= norm
    return features


class ToyEncoder:
    """Two-tower linear encoder over hashed bag-of-words features.

    Weight matrices are filled row-major from a single xoshiro256** stream
    (W_q first, then W_p) with Glorot-uniform bounds, so a seed fully
    determines the parameters on every platform.
    """

    def __init__(self, hash_dim: int = 4096, embed_dim: int = 64, seed: int = 0):
        if hash_dim < 1 or embed_dim < 1:
            raise ValueError("hash_dim and embed_dim must be positive")
        self.hash_dim = hash_dim
        self.embed_dim = embed_dim
        self.seed = seed
        limit = math.sqrt(6.0 / (hash_dim + embed_dim))
        rng = Xoshiro256StarStar(seed)
        total = embed_dim * hash_dim
        self.w_query = np.array(
            [rng.uniform(-limit, limit) for _ in range(total)],
            dtype=np.float64).reshape(embed_dim, hash_dim)
        self.w_passage = np.array(
            [rng.uniform(-limit, limit) for _ in range(total)],
            dtype=np.float64).reshape(embed_dim, hash_dim)

    @classmethod
    def from_weights(cls, w_query: np.ndarray, w_passage: np.ndarray,
                     seed: int = 0) -> "ToyEncoder":
        if w_query.shape != w_passage.shape or w_query.ndim != 2:
            raise ValueError("w_query and w_passage must share a 2-d shape")
        encoder = cls.__new__(cls)
        encoder.embed_dim, encoder.hash_dim = w_query.shape
        encoder.seed = seed
        encoder.w_query = np.asarray(w_query, dtype=np.float64).copy()
        encoder.w_passage = np.asarray(w_passage, dtype=np.float64).copy()
        return encoder

    def featurize(self, tokens) -> np.ndarray:
        return featurize(tokens, self.hash_dim)

    def encode_passage(self, passage: Passage) -> np.ndarray:
        return self.w_passage @ self.featurize(passage.tokens)

    def encode_query(self, question: Question,
                     prev: Passage | None = None) -> np.ndarray:
        """Encode a question, optionally conditioned on the previous hop.

        With ``prev`` the question tokens are concatenated with the
        passage tokens before featurizing, mirroring how the next-hop
        query is formed from the question plus the last retrieved passage.
        """
        tokens = tokenize(question.text)
        if prev is not None:
            tokens = tokens + list(prev.tokens)
        return self.w_query @ self.featurize(tokens)

    def encode_corpus(self, corpus: Corpus) -> "EmbeddingMatrix":
        ids = list(corpus.passages)
        vectors = np.stack([self.encode_passage(corpus.passages[pid])
                            for pid in ids])
        return EmbeddingMatrix(ids=ids, vectors=vectors.astype(np.float32))

    def encode_questions(self, questions) -> "EmbeddingMatrix":
        ids = [q.id for q in questions]
        vectors = np.stack([self.encode_query(q) for q in questions])
        return EmbeddingMatrix(ids=ids, vectors=vectors.astype(np.float32))


@dataclass
class EmbeddingMatrix:
    """Id-aligned dense vectors; row i belongs to ids[i]."""

    ids: list[str]
    vectors: np.ndarray  # (len(ids), d) float32

    def __post_init__(self) -> None:
        self.vectors = np.ascontiguousarray(self.vectors, dtype=np.float32)
        if self.vectors.ndim != 2:
            raise ValueError("vectors must be a 2-d matrix")
        if len(self.ids) != self.vectors.shape[0]:
            raise ValueError("row count must match id count")
        if self.vectors.shape[1] < 1:
            raise ValueError("invalid dimension")
        if len(set(self.ids)) != len(self.ids):
            raise ValueError("duplicate id in embedding matrix")
        if not np.isfinite(self.vectors).all():
            raise ValueError("embedding matrix contains non-finite values")

    @property
    def d(self) -> int:
        return self.vectors.shape[1]

    def _lookup(self) -> dict[str, int]:
        # built on first use; the dataclass is treated as immutable after init
        table = getattr(self, "_row_of", None)
        if table is None:
            table = {row_id: i for i, row_id in enumerate(self.ids)}
            object.__setattr__(self, "_row_of", table)
        return table

    def row_index(self, row_id: str) -> int:
        try:
            return self._lookup()[row_id]
        except KeyError:
            raise KeyError(f"no embedding for id {row_id!r}") from None

    def row(self, row_id: str) -> np.ndarray:
        return self.vectors[self.row_index(row_id)]


# ---------------------------------------------------------------------------
# HSEM1 file format (see docs/formats.md):
#   magic "HSEM1" | u32le d | u64le count
#   then per row: u16le id byte length | id UTF-8 | d * f32le
# ---------------------------------------------------------------------------

def save_embeddings(path: str | Path, matrix: EmbeddingMatrix) -> None:
    with open(path, "wb") as handle:
        handle.write(EMBEDDINGS_MAGIC)
        handle.write(struct.pack("<IQ", matrix.d, len(matrix.ids)))
        for row_id, row in zip(matrix.ids, matrix.vectors):
            raw = row_id.encode("utf-8")
            if len(raw) > 0xFFFF:
                raise ValueError(f"id too long to serialize: {row_id[:40]!r}...")
            handle.write(struct.pack("<H", len(raw)))
            handle.write(raw)
            handle.write(row.astype("<f4").tobytes())


def load_embeddings(path: str | Path) -> EmbeddingMatrix:
    data = Path(path).read_bytes()
    if data[:5] != EMBEDDINGS_MAGIC:
        raise ValueError(f"{path}: bad magic (not an HSEM1 embedding file)")
    if len(data) < 5 + 12:
        raise ValueError(f"{path}: truncated header")
    d, count = struct.unpack_from("<IQ", data, 5)
    if d == 0:
        raise ValueError(f"{path}: invalid dimension 0")
    offset = 17
    ids: list[str] = []
    rows = np.empty((count, d), dtype=np.float32)
    row_bytes = 4 * d
    for i in range(count):
        if offset + 2 > len(data):
            raise ValueError(f"{path}: truncated at row {i}")
        (id_len,) = struct.unpack_from("<H", data, offset)
        offset += 2
        if offset + id_len + row_bytes > len(data):
            raise ValueError(f"{path}: truncated at row {i}")
        ids.append(data[offset:offset + id_len].decode("utf-8"))
        offset += id_len
        rows[i] = np.frombuffer(data, dtype="<f4", count=d, offset=offset)
        offset += row_bytes
    if offset != len(data):
        raise ValueError(f"{path}: {len(data) - offset} trailing bytes")
    if len(set(ids)) != len(ids):
        raise ValueError(f"{path}: duplicate id in embedding file")
    return EmbeddingMatrix(ids=ids, vectors=rows)
