"""Lexical retrieval: pluggable tokenization, inverted index, BM25 ranking.

The default tokenizer is character bigrams over Unicode codepoints with all
whitespace removed, which needs no morphological analysis and works for
Japanese as well as space-delimited text.  Scoring uses

    idf(t) = ln((N - df + 0.5) / (df + 0.5) + 1)
    score(q, d) = sum over query tokens of
        idf(t) * tf * (k1 + 1) / (tf + k1 * (1 - b + b * len(d) / avgdl))

with k1 = 0.9 and b = 0.4 by default.  The +1 inside the log keeps idf
non-negative.  Repeated query tokens contribute once per occurrence.

Index directory layout: ``postings.bin`` (magic LIBP), ``doclens.bin``
(magic LIDL), ``meta.json`` (tokenizer scheme, parameters, counts).
"""

from __future__ import annotations

import json
import math
import struct
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import ConfigError, DuplicateDocId, FormatError
from .ranking import RankedList, ranked_from_scores
from .store import CorpusRecord

POSTINGS_MAGIC = b"LIBP"
DOCLENS_MAGIC = b"LIDL"
BM25_FORMAT_VERSION = 1

SCHEMES = ("char_bigram", "char_unigram", "whitespace")

DEFAULT_K1 = 0.9
DEFAULT_B = 0.4


@dataclass(frozen=True)
class Tokenizer:
    scheme: str = "char_bigram"
    lowercase: bool = True

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown tokenizer scheme {self.scheme!r}")


def tokenize(text: str, t: Tokenizer) -> list[str]:
    """Deterministic token sequence; empty text yields an empty sequence."""
    if t.lowercase:
        text = text.lower()
    if t.scheme == "whitespace":
        return text.split()
    chars = [c for c in text if not c.isspace()]
    if t.scheme == "char_unigram" or len(chars) == 1:
        return chars
    return [chars[i] + chars[i + 1] for i in range(len(chars) - 1)]


@dataclass
class BM25Index:
    tokenizer: Tokenizer
    k1: float
    b: float
    doc_ids: list[str]
    doc_lengths: np.ndarray  # (N,) int64 token counts
    avgdl: float
    postings: dict[str, tuple[np.ndarray, np.ndarray]]  # term -> (doc indexes, tfs)

    @property
    def n_docs(self) -> int:
        return len(self.doc_ids)

    def idf(self, term: str) -> float:
        entry = self.postings.get(term)
        df = len(entry[0]) if entry is not None else 0
        return math.log((self.n_docs - df + 0.5) / (df + 0.5) + 1.0)


def build_bm25(
    corpus: Iterable[CorpusRecord],
    t: Tokenizer,
    k1: float = DEFAULT_K1,
    b: float = DEFAULT_B,
) -> BM25Index:
    if k1 < 0:
        raise ValueError("k1 must be >= 0")
    if not 0.0 <= b <= 1.0:
        raise ValueError("b must be in [0, 1]")
    doc_ids: list[str] = []
    lengths: list[int] = []
    raw_postings: dict[str, list[tuple[int, int]]] = {}
    seen: set[str] = set()
    for record in corpus:
        if record.id in seen:
            raise DuplicateDocId(f"duplicate id {record.id!r}")
        seen.add(record.id)
        idx = len(doc_ids)
        doc_ids.append(record.id)
        tokens = tokenize(record.text, t)
        lengths.append(len(tokens))
        for term, tf in Counter(tokens).items():
            raw_postings.setdefault(term, []).append((idx, tf))
    postings = {
        term: (
            np.array([d for d, _ in entries], dtype=np.int64),
            np.array([tf for _, tf in entries], dtype=np.int64),
        )
        for term, entries in raw_postings.items()
    }
    doc_lengths = np.array(lengths, dtype=np.int64)
    avgdl = float(doc_lengths.mean()) if len(doc_ids) else 0.0
    return BM25Index(
        tokenizer=t,
        k1=k1,
        b=b,
        doc_ids=doc_ids,
        doc_lengths=doc_lengths,
        avgdl=avgdl,
        postings=postings,
    )


def search_bm25(
    index: BM25Index, query: str, t: Tokenizer, k: int, query_id: str = ""
) -> RankedList:
    """Top-k matching documents; a query matching nothing gives an empty list."""
    if t != index.tokenizer:
        raise ConfigError(
            f"query tokenizer {t} differs from index tokenizer {index.tokenizer}"
        )
    if k < 1:
        raise ValueError("k must be >= 1")
    scores = np.zeros(index.n_docs, dtype=np.float64)
    matched = np.zeros(index.n_docs, dtype=bool)
    for term in tokenize(query, t):
        entry = index.postings.get(term)
        if entry is None:
            continue
        docs, tfs = entry
        idf = index.idf(term)
        tf = tfs.astype(np.float64)
        norm = 1.0 - index.b + index.b * index.doc_lengths[docs] / index.avgdl
        scores[docs] += idf * tf * (index.k1 + 1.0) / (tf + index.k1 * norm)
        matched[docs] = True
    hit = np.flatnonzero(matched)
    if hit.size == 0:
        return RankedList(query_id=query_id)
    return ranked_from_scores(query_id, [index.doc_ids[i] for i in hit], scores[hit], k=k)


def save_bm25(index: BM25Index, directory: str | Path) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    with open(directory / "postings.bin", "wb") as fh:
        fh.write(struct.pack("<4sIQ", POSTINGS_MAGIC, BM25_FORMAT_VERSION, len(index.postings)))
        for term in sorted(index.postings):
            docs, tfs = index.postings[term]
            term_bytes = term.encode("utf-8")
            fh.write(struct.pack("<HI", len(term_bytes), len(docs)))
            fh.write(term_bytes)
            fh.write(np.ascontiguousarray(docs, dtype="<u4").tobytes())
            fh.write(np.ascontiguousarray(tfs, dtype="<u4").tobytes())
    with open(directory / "doclens.bin", "wb") as fh:
        fh.write(struct.pack("<4sIQ", DOCLENS_MAGIC, BM25_FORMAT_VERSION, index.n_docs))
        for doc_id, length in zip(index.doc_ids, index.doc_lengths):
            id_bytes = doc_id.encode("utf-8")
            fh.write(struct.pack("<H", len(id_bytes)))
            fh.write(id_bytes)
            fh.write(struct.pack("<I", int(length)))
    meta = {
        "format_version": BM25_FORMAT_VERSION,
        "scheme": index.tokenizer.scheme,
        "lowercase": index.tokenizer.lowercase,
        "k1": index.k1,
        "b": index.b,
        "doc_count": index.n_docs,
        "term_count": len(index.postings),
        "avgdl": index.avgdl,
    }
    (directory / "meta.json").write_text(
        json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def load_bm25(directory: str | Path) -> BM25Index:
    directory = Path(directory)
    meta = json.loads((directory / "meta.json").read_text(encoding="utf-8"))
    tokenizer = Tokenizer(scheme=meta["scheme"], lowercase=meta["lowercase"])

    path = directory / "doclens.bin"
    data = path.read_bytes()
    magic, version, n_docs = struct.unpack_from("<4sIQ", data, 0)
    if magic != DOCLENS_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    offset = 16
    doc_ids: list[str] = []
    lengths: list[int] = []
    for _ in range(n_docs):
        (id_len,) = struct.unpack_from("<H", data, offset)
        offset += 2
        doc_ids.append(data[offset : offset + id_len].decode("utf-8"))
        offset += id_len
        (length,) = struct.unpack_from("<I", data, offset)
        offset += 4
        lengths.append(length)

    path = directory / "postings.bin"
    data = path.read_bytes()
    magic, version, n_terms = struct.unpack_from("<4sIQ", data, 0)
    if magic != POSTINGS_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    offset = 16
    postings: dict[str, tuple[np.ndarray, np.ndarray]] = {}
    for _ in range(n_terms):
        term_len, df = struct.unpack_from("<HI", data, offset)
        offset += 6
        term = data[offset : offset + term_len].decode("utf-8")
        offset += term_len
        docs = np.frombuffer(data, dtype="<u4", count=df, offset=offset).astype(np.int64)
        offset += df * 4
        tfs = np.frombuffer(data, dtype="<u4", count=df, offset=offset).astype(np.int64)
        offset += df * 4
        postings[term] = (docs, tfs)

    doc_lengths = np.array(lengths, dtype=np.int64)
    return BM25Index(
        tokenizer=tokenizer,
        k1=float(meta["k1"]),
        b=float(meta["b"]),
        doc_ids=doc_ids,
        doc_lengths=doc_lengths,
        avgdl=float(meta["avgdl"]),
        postings=postings,
    )
