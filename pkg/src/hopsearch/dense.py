"""Exact maximum-inner-product search over an embedding matrix.

This is the retrieval substrate for single-hop dense search and for both
hops of the multi-hop retrievers. Search is an exact full scan: every
score is the true inner product, so results are oracle-checkable and the
ranking is reproducible bit for bit. Approximate structures (HNSW and
friends) are deliberately out of scope at this corpus scale.
"""

from __future__ import annotations

from collections.abc import Iterable, Sequence
from dataclasses import dataclass

import numpy as np

from .encoder import EmbeddingMatrix

RankedList = list[tuple[str, float]]

_EMPTY: frozenset[str] = frozenset()


@dataclass
class DenseIndex:
    """Immutable wrapper over id-aligned vectors; safe for concurrent reads."""

    matrix: EmbeddingMatrix

    @property
    def d(self) -> int:
        return self.matrix.d

    def __len__(self) -> int:
        return len(self.matrix.ids)

    def search(self, query_vec: np.ndarray, k: int,
               exclude: frozenset[str] | set[str] = _EMPTY) -> RankedList:
        """Top-k passages by inner product, descending.

        Ties break by ascending passage id. Ids in `exclude` are never
        returned, so the result may be shorter than k.
        """
        if k < 1:
            raise ValueError("k must be >= 1")
        q = np.asarray(query_vec, dtype=np.float64)
        if q.ndim != 1 or q.shape[0] != self.matrix.d:
            raise ValueError(
                f"query dimension {q.shape} does not match index dimension "
                f"{self.matrix.d}")
        if not np.all(np.isfinite(q)):
            raise ValueError("query vector contains non-finite values")
        scores = self.matrix.vectors @ q
        ids = self.matrix.ids
        items = [(ids[i], float(scores[i]))
                 for i in range(len(ids)) if ids[i] not in exclude]
        items.sort(key=lambda item: (-item[1], item[0]))
        return items[:k]

    def batch_search(self, queries: Sequence[np.ndarray] | np.ndarray, k: int,
                     excludes: Iterable[frozenset[str] | set[str]] | None = None,
                     ) -> list[RankedList]:
        """Per-query search over a batch; identical to calling search in a loop."""
        queries = list(np.asarray(queries)) if isinstance(queries, np.ndarray) \
            else list(queries)
        if excludes is None:
            exclude_list: list[frozenset[str] | set[str]] = [_EMPTY] * len(queries)
        else:
            exclude_list = list(excludes)
            if len(exclude_list) != len(queries):
                raise ValueError(
                    f"{len(queries)} queries but {len(exclude_list)} exclude sets")
        return [self.search(q, k, ex) for q, ex in zip(queries, exclude_list)]
