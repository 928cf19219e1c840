"""Flat exact late-interaction search over an embedding store.

Documents are stored as one concatenated token matrix (in float32 or
float16) plus per-document offsets.  A search scores every document:
similarities are computed in float64 regardless of storage precision, so
16-bit storage only affects the vectors, never the arithmetic.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DimMismatch, EmptyStore, FormatError
from .ranking import RankedList, ranked_from_scores
from .store import (
    PRECISION_DTYPES,
    EmbeddingStore,
    read_embedding_file,
    write_embedding_file,
)

EXACT_META_NAME = "index-meta.json"


@dataclass
class ExactIndex:
    dim: int
    precision: str
    doc_ids: list[str]
    tokens: np.ndarray  # (total_tokens, dim) in storage precision
    offsets: np.ndarray  # (n_docs + 1,) int64 token offsets per document
    _tokens64: np.ndarray | None = field(default=None, repr=False)

    @property
    def n_docs(self) -> int:
        return len(self.doc_ids)

    def tokens_f64(self) -> np.ndarray:
        if self._tokens64 is None:
            self._tokens64 = self.tokens.astype(np.float64)
        return self._tokens64

    def doc_matrix(self, i: int) -> np.ndarray:
        return self.tokens[self.offsets[i] : self.offsets[i + 1]]


def build_exact(store: EmbeddingStore, precision: str = "float16") -> ExactIndex:
    """Build a flat index covering every document once, cast to `precision`."""
    if len(store) == 0:
        raise EmptyStore("cannot index an empty store")
    dtype = PRECISION_DTYPES[precision]
    doc_ids = store.doc_ids
    matrices = [store.entries[d].astype(dtype) for d in doc_ids]
    counts = np.array([m.shape[0] for m in matrices], dtype=np.int64)
    offsets = np.zeros(len(doc_ids) + 1, dtype=np.int64)
    np.cumsum(counts, out=offsets[1:])
    tokens = np.vstack(matrices)
    return ExactIndex(
        dim=store.dim, precision=precision, doc_ids=doc_ids, tokens=tokens, offsets=offsets
    )


def search_exact(
    index: ExactIndex, q: np.ndarray, k: int, query_id: str = ""
) -> RankedList:
    """Top-min(k, N) documents by maxsim, scoring every document exactly once."""
    q = np.asarray(q, dtype=np.float64)
    if q.ndim != 2 or q.shape[1] != index.dim:
        raise DimMismatch(f"query shape {q.shape} does not match index dim {index.dim}")
    if k < 1:
        raise ValueError("k must be >= 1")
    sims = q @ index.tokens_f64().T  # (q_tokens, total_doc_tokens)
    per_doc_max = np.maximum.reduceat(sims, index.offsets[:-1], axis=1)
    scores = per_doc_max.sum(axis=0)
    return ranked_from_scores(query_id, index.doc_ids, scores, k=k)


def save_exact(index: ExactIndex, directory: str | Path) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = ((d, index.doc_matrix(i)) for i, d in enumerate(index.doc_ids))
    write_embedding_file(directory / "embeddings.bin", index.dim, index.precision, entries)
    meta = {
        "mode": "exact",
        "dim": index.dim,
        "precision": index.precision,
        "doc_count": index.n_docs,
        "token_count": int(index.offsets[-1]),
        "format_version": 1,
    }
    (directory / EXACT_META_NAME).write_text(
        json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def load_exact(directory: str | Path) -> ExactIndex:
    directory = Path(directory)
    meta = json.loads((directory / EXACT_META_NAME).read_text(encoding="utf-8"))
    if meta.get("mode") != "exact":
        raise FormatError(f"{directory}: not an exact index")
    dim, precision, raw = read_embedding_file(directory / "embeddings.bin")
    doc_ids = [doc_id for doc_id, _ in raw]
    counts = np.array([m.shape[0] for _, m in raw], dtype=np.int64)
    offsets = np.zeros(len(raw) + 1, dtype=np.int64)
    np.cumsum(counts, out=offsets[1:])
    tokens = np.vstack([m for _, m in raw])
    return ExactIndex(dim=dim, precision=precision, doc_ids=doc_ids, tokens=tokens, offsets=offsets)
