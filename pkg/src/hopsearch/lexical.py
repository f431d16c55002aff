"""BM25 retrieval over an inverted index.

Lucene-style scoring with the Anserini default parameters (k1=0.9, b=0.4):

    score(q, d) = sum over unique query terms t of
        IDF(t) * tf(t,d) * (k1 + 1) / (tf(t,d) + k1 * (1 - b + b * dl(d)/avgdl))
    IDF(t) = ln(1 + (N - df(t) + 0.5) / (df(t) + 0.5))

Ties in ranked output break by ascending passage id so results are
deterministic. Zero-score passages are never returned.
"""

from __future__ import annotations

import math
import struct
from pathlib import Path

from .corpus import Corpus

MAGIC = b"HSLX1"


class InvertedIndex:
    """Term postings plus the statistics BM25 needs (N, avgdl, df)."""

    def __init__(self, postings: dict[str, list[tuple[str, int]]],
                 doc_len: dict[str, int], k1: float = 0.9, b: float = 0.4):
        if not doc_len:
            raise ValueError("empty corpus")
        if not 0.0 <= b <= 1.0:
            raise ValueError(f"b must be in [0, 1], got {b}")
        if k1 < 0.0:
            raise ValueError(f"k1 must be non-negative, got {k1}")
        self.postings = postings
        self.doc_len = doc_len
        self.k1 = k1
        self.b = b
        self.N = len(doc_len)
        self.avgdl = sum(doc_len.values()) / self.N
        self._tf = {term: dict(plist) for term, plist in postings.items()}

    def idf(self, term: str) -> float:
        """ln(1 + (N - df + 0.5) / (df + 0.5)); 0 for unindexed terms."""
        plist = self.postings.get(term)
        if not plist:
            return 0.0
        df = len(plist)
        return math.log(1.0 + (self.N - df + 0.5) / (df + 0.5))

    def _term_weight(self, term: str, passage_id: str) -> float:
        tf = self._tf.get(term, {}).get(passage_id)
        if tf is None:
            return 0.0
        dl = self.doc_len[passage_id]
        norm = self.k1 * (1.0 - self.b + self.b * dl / self.avgdl)
        return self.idf(term) * tf * (self.k1 + 1.0) / (tf + norm)

    def bm25_score(self, query_tokens: list[str], passage_id: str) -> float:
        """Score one passage against a query; duplicate terms count once."""
        if passage_id not in self.doc_len:
            raise KeyError(f"unknown passage id {passage_id!r}")
        score = 0.0
        for term in dict.fromkeys(query_tokens):
            score += self._term_weight(term, passage_id)
        return score

    def search(self, query_tokens: list[str], k: int) -> list[tuple[str, float]]:
        """Top-k passages by BM25, descending; only positive scores.

        Accumulates in the same term order as bm25_score so returned scores
        are bit-identical to per-passage scoring.
        """
        if k < 1:
            raise ValueError(f"k must be >= 1, got {k}")
        scores: dict[str, float] = {}
        for term in dict.fromkeys(query_tokens):
            plist = self.postings.get(term)
            if not plist:
                continue
            idf = self.idf(term)
            for passage_id, tf in plist:
                dl = self.doc_len[passage_id]
                norm = self.k1 * (1.0 - self.b + self.b * dl / self.avgdl)
                weight = idf * tf * (self.k1 + 1.0) / (tf + norm)
                scores[passage_id] = scores.get(passage_id, 0.0) + weight
        ranked = sorted(((pid, s) for pid, s in scores.items() if s > 0.0),
                        key=lambda item: (-item[1], item[0]))
        return ranked[:k]


def build_index(corpus: Corpus, k1: float = 0.9, b: float = 0.4) -> InvertedIndex:
    """Index every passage of ``corpus``; deterministic in corpus order."""
    if len(corpus) == 0:
        raise ValueError("empty corpus")
    postings: dict[str, list[tuple[str, int]]] = {}
    doc_len: dict[str, int] = {}
    for passage in corpus.passages.values():
        doc_len[passage.id] = len(passage.tokens)
        counts: dict[str, int] = {}
        for token in passage.tokens:
            counts[token] = counts.get(token, 0) + 1
        for term, tf in counts.items():
            postings.setdefault(term, []).append((passage.id, tf))
    return InvertedIndex(postings, doc_len, k1=k1, b=b)


# ---------------------------------------------------------------------------
# Persistence. Byte layout (see also docs/formats.md):
#   magic "HSLX1", then named sections, each
#     u8 name length | name ASCII | u64le payload length | payload
#   "params":   f64le k1, f64le b
#   "doclen":   u64le count, then per doc: u16le id len | id UTF-8 | u32le len
#   "postings": u64le terms, then per term: u16le term len | term UTF-8 |
#               u32le postings count, then per posting: u32le doc ordinal
#               (index into the doclen section) | u32le tf
# Unknown sections are skipped; the magic versions the whole layout.
# ---------------------------------------------------------------------------

def save_index(path: str | Path, index: InvertedIndex) -> None:
    doc_ids = list(index.doc_len)
    ordinal = {pid: i for i, pid in enumerate(doc_ids)}

    doclen = [struct.pack("<Q", len(doc_ids))]
    for pid in doc_ids:
        raw = pid.encode("utf-8")
        doclen.append(struct.pack("<H", len(raw)) + raw +
                      struct.pack("<I", index.doc_len[pid]))

    postings = [struct.pack("<Q", len(index.postings))]
    for term, plist in index.postings.items():
        raw = term.encode("utf-8")
        postings.append(struct.pack("<H", len(raw)) + raw +
                        struct.pack("<I", len(plist)))
        for pid, tf in plist:
            postings.append(struct.pack("<II", ordinal[pid], tf))

    with open(path, "wb") as handle:
        handle.write(MAGIC)
        for name, payload in (
            (b"params", struct.pack("<dd", index.k1, index.b)),
            (b"doclen", b"".join(doclen)),
            (b"postings", b"".join(postings)),
        ):
            handle.write(struct.pack("<B", len(name)) + name)
            handle.write(struct.pack("<Q", len(payload)))
            handle.write(payload)


def load_index(path: str | Path) -> InvertedIndex:
    data = Path(path).read_bytes()
    if data[:5] != MAGIC:
        raise ValueError(f"{path}: bad magic (not an HSLX1 index)")
    sections: dict[str, bytes] = {}
    offset = 5
    while offset < len(data):
        name_len = data[offset]
        offset += 1
        name = data[offset:offset + name_len].decode("ascii")
        offset += name_len
        (payload_len,) = struct.unpack_from("<Q", data, offset)
        offset += 8
        if offset + payload_len > len(data):
            raise ValueError(f"{path}: truncated section {name!r}")
        sections[name] = data[offset:offset + payload_len]
        offset += payload_len
    for required in ("params", "doclen", "postings"):
        if required not in sections:
            raise ValueError(f"{path}: missing section {required!r}")

    k1, b = struct.unpack("<dd", sections["params"])

    blob = sections["doclen"]
    (count,) = struct.unpack_from("<Q", blob, 0)
    pos = 8
    doc_ids: list[str] = []
    doc_len: dict[str, int] = {}
    for _ in range(count):
        (id_len,) = struct.unpack_from("<H", blob, pos)
        pos += 2
        pid = blob[pos:pos + id_len].decode("utf-8")
        pos += id_len
        (length,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        doc_ids.append(pid)
        doc_len[pid] = length

    blob = sections["postings"]
    (terms,) = struct.unpack_from("<Q", blob, 0)
    pos = 8
    postings: dict[str, list[tuple[str, int]]] = {}
    for _ in range(terms):
        (term_len,) = struct.unpack_from("<H", blob, pos)
        pos += 2
        term = blob[pos:pos + term_len].decode("utf-8")
        pos += term_len
        (num,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        plist = []
        for _ in range(num):
            doc_ordinal, tf = struct.unpack_from("<II", blob, pos)
            pos += 8
            plist.append((doc_ids[doc_ordinal], tf))
        postings[term] = plist

    return InvertedIndex(postings, doc_len, k1=k1, b=b)
