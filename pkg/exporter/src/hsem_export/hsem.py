"""HSEM1 embedding file writer.

Layout (little-endian): 5-byte magic ``HSEM1``, u32 embedding dimension,
u64 row count, then per row a u16 id length, the UTF-8 id, and the row as
float32 values. Row order is exactly the order rows were appended.
"""

import struct
from pathlib import Path

import numpy as np

MAGIC = b"HSEM1"


def write_hsem(path: str | Path, ids: list[str], vectors: np.ndarray) -> None:
    if vectors.ndim != 2:
        raise ValueError(f"expected a 2-d matrix, got shape {vectors.shape}")
    if len(ids) != vectors.shape[0]:
        raise ValueError(
            f"{len(ids)} ids for {vectors.shape[0]} vector rows")
    d = vectors.shape[1]
    if d < 1:
        raise ValueError("embedding dimension must be positive")
    if not np.isfinite(vectors).all():
        raise ValueError("refusing to write non-finite embedding values")
    with open(path, "wb") as handle:
        handle.write(MAGIC)
        handle.write(struct.pack("<IQ", d, len(ids)))
        for row_id, row in zip(ids, vectors):
            raw = row_id.encode("utf-8")
            if len(raw) > 0xFFFF:
                raise ValueError(f"id too long: {row_id[:40]!r}...")
            handle.write(struct.pack("<H", len(raw)))
            handle.write(raw)
            handle.write(np.ascontiguousarray(row, dtype="<f4").tobytes())


def read_header(path: str | Path) -> tuple[int, int]:
    """Return (dimension, row count) without loading the rows."""
    with open(path, "rb") as handle:
        head = handle.read(len(MAGIC) + 12)
    if head[:len(MAGIC)] != MAGIC:
        raise ValueError(f"{path}: not an HSEM1 file")
    if len(head) < len(MAGIC) + 12:
        raise ValueError(f"{path}: truncated header")
    d, count = struct.unpack_from("<IQ", head, len(MAGIC))
    return d, count
