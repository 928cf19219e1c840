"""Token-embedding data model, normalization, and on-disk formats.

A token matrix is a plain ``(rows, dim)`` numpy array, one unit-normalized
row per token.  Documents may carry at most 512 tokens, queries at most 64.

Embedding file format (little-endian throughout)::

    header:  magic b"LIEM" | u32 version (=1) | u32 dim
             | u8 precision (0 = float32, 1 = float16) | u64 entry count
    entry:   u16 id length | id bytes (UTF-8) | u16 token count
             | token_count * dim values in the declared precision, row-major

A persisted store is a directory holding ``embeddings.bin`` in that format
plus ``manifest.json``.

Corpus files are JSONL with one ``{"id": ..., "text": ...}`` object per line.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import DuplicateDocId, FormatError, LengthError, ParseError, ZeroVectorRow

EMBEDDING_MAGIC = b"LIEM"
EMBEDDING_FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sIIBQ")

MAX_DOC_TOKENS = 512
MAX_QUERY_TOKENS = 64

PRECISION_DTYPES = {"float32": np.dtype("<f4"), "float16": np.dtype("<f2")}
_PRECISION_CODES = {"float32": 0, "float16": 1}
_CODE_PRECISIONS = {v: k for k, v in _PRECISION_CODES.items()}

KINDS = ("document", "query")


def token_limit(kind: str) -> int:
    if kind not in KINDS:
        raise ValueError(f"unknown kind {kind!r}")
    return MAX_DOC_TOKENS if kind == "document" else MAX_QUERY_TOKENS


@dataclass
class CorpusRecord:
    id: str
    text: str


@dataclass
class StoreManifest:
    corpus: str
    created: str
    entry_count: int


@dataclass
class EmbeddingStore:
    """Immutable-after-ingestion collection of per-document token matrices."""

    dim: int
    precision: str
    kind: str
    entries: dict[str, np.ndarray]
    manifest: StoreManifest = field(
        default_factory=lambda: StoreManifest("", "", 0)
    )

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def doc_ids(self) -> list[str]:
        return list(self.entries)

    @property
    def total_tokens(self) -> int:
        return sum(m.shape[0] for m in self.entries.values())


def _unit_rows(values: np.ndarray) -> np.ndarray:
    """Divide each row by its L2 norm, in float64."""
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 2:
        raise ValueError(f"expected a 2-d token matrix, got shape {v.shape}")
    norms = np.linalg.norm(v, axis=1)
    bad = np.flatnonzero(norms < 1e-12)
    if bad.size:
        raise ZeroVectorRow(int(bad[0]))
    return v / norms[:, None]


def normalize_matrix(m: np.ndarray) -> np.ndarray:
    """Unit-normalize every row of a token matrix.

    Directions are preserved; math runs in float64 and the result is
    float64.  Raises ZeroVectorRow for rows with norm below 1e-12.
    """
    return _unit_rows(m)


def _normalize_to_precision(values: np.ndarray, dtype: np.dtype) -> np.ndarray:
    # Iterate normalize-then-cast to a fixpoint so serializing a store and
    # re-ingesting it reproduces the exact same stored bits.
    cur = np.asarray(values)
    for _ in range(6):
        nxt = _unit_rows(cur).astype(dtype)
        if cur.dtype == nxt.dtype and np.array_equal(cur, nxt):
            return nxt
        cur = nxt
    return cur


def write_embedding_file(
    path: str | Path,
    dim: int,
    precision: str,
    entries: Iterable[tuple[str, np.ndarray]],
) -> int:
    """Write entries to an embedding file; returns the entry count."""
    if precision not in PRECISION_DTYPES:
        raise ValueError(f"unknown precision {precision!r}")
    dtype = PRECISION_DTYPES[precision]
    entries = list(entries)
    with open(path, "wb") as fh:
        fh.write(
            _HEADER.pack(
                EMBEDDING_MAGIC,
                EMBEDDING_FORMAT_VERSION,
                dim,
                _PRECISION_CODES[precision],
                len(entries),
            )
        )
        for doc_id, matrix in entries:
            matrix = np.asarray(matrix)
            if matrix.ndim != 2 or matrix.shape[1] != dim:
                raise FormatError(
                    f"entry {doc_id!r} has shape {matrix.shape}, expected (*, {dim})"
                )
            id_bytes = doc_id.encode("utf-8")
            fh.write(struct.pack("<H", len(id_bytes)))
            fh.write(id_bytes)
            fh.write(struct.pack("<H", matrix.shape[0]))
            fh.write(np.ascontiguousarray(matrix, dtype=dtype).tobytes())
    return len(entries)


def read_embedding_file(path: str | Path) -> tuple[int, str, list[tuple[str, np.ndarray]]]:
    """Read an embedding file, returning (dim, precision, entries)."""
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, version, dim, prec_code, count = _HEADER.unpack_from(data, 0)
    if magic != EMBEDDING_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != EMBEDDING_FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    if prec_code not in _CODE_PRECISIONS:
        raise FormatError(f"{path}: unknown precision code {prec_code}")
    if dim < 1:
        raise FormatError(f"{path}: invalid dim {dim}")
    precision = _CODE_PRECISIONS[prec_code]
    dtype = PRECISION_DTYPES[precision]

    entries: list[tuple[str, np.ndarray]] = []
    seen: set[str] = set()
    offset = _HEADER.size
    for _ in range(count):
        try:
            (id_len,) = struct.unpack_from("<H", data, offset)
            offset += 2
            doc_id = data[offset : offset + id_len].decode("utf-8")
            offset += id_len
            (rows,) = struct.unpack_from("<H", data, offset)
            offset += 2
            nbytes = rows * dim * dtype.itemsize
            if offset + nbytes > len(data):
                raise FormatError(f"{path}: truncated entry {doc_id!r}")
            matrix = np.frombuffer(data, dtype=dtype, count=rows * dim, offset=offset)
            offset += nbytes
        except (struct.error, UnicodeDecodeError) as exc:
            raise FormatError(f"{path}: corrupt entry table: {exc}") from exc
        if rows < 1:
            raise FormatError(f"{path}: entry {doc_id!r} has zero tokens")
        if doc_id in seen:
            raise FormatError(f"{path}: duplicate id {doc_id!r}")
        seen.add(doc_id)
        entries.append((doc_id, matrix.reshape(rows, dim).copy()))
    if offset != len(data):
        raise FormatError(f"{path}: {len(data) - offset} trailing bytes")
    return dim, precision, entries


def _created_stamp(path: str | Path) -> str:
    # Derived from the source file's mtime rather than the wall clock so
    # that re-running ingestion on identical inputs is byte-reproducible.
    mtime = os.stat(path).st_mtime
    return datetime.fromtimestamp(mtime, tz=timezone.utc).isoformat(timespec="seconds")


def ingest_embeddings(path: str | Path, kind: str) -> EmbeddingStore:
    """Load an embedding file into a normalized in-memory store.

    Every row is unit-normalized (in the file's precision), the per-kind
    token limit is enforced, and ingestion order is preserved.
    """
    limit = token_limit(kind)
    dim, precision, raw = read_embedding_file(path)
    dtype = PRECISION_DTYPES[precision]
    entries: dict[str, np.ndarray] = {}
    for doc_id, matrix in raw:
        if matrix.shape[0] > limit:
            raise LengthError(doc_id, matrix.shape[0], limit)
        entries[doc_id] = _normalize_to_precision(matrix, dtype)
    manifest = StoreManifest(
        corpus=Path(path).stem, created=_created_stamp(path), entry_count=len(entries)
    )
    return EmbeddingStore(dim=dim, precision=precision, kind=kind, entries=entries, manifest=manifest)


def cast_precision(store: EmbeddingStore, target: str) -> EmbeddingStore:
    """Return a copy of the store with values round-to-nearest in target precision."""
    if target not in PRECISION_DTYPES:
        raise ValueError(f"unknown precision {target!r}")
    dtype = PRECISION_DTYPES[target]
    entries = {doc_id: m.astype(dtype) for doc_id, m in store.entries.items()}
    return EmbeddingStore(
        dim=store.dim,
        precision=target,
        kind=store.kind,
        entries=entries,
        manifest=StoreManifest(
            store.manifest.corpus, store.manifest.created, store.manifest.entry_count
        ),
    )


def save_store(store: EmbeddingStore, directory: str | Path) -> None:
    """Persist a store as <dir>/embeddings.bin + <dir>/manifest.json."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_embedding_file(
        directory / "embeddings.bin", store.dim, store.precision, store.entries.items()
    )
    manifest = {
        "corpus": store.manifest.corpus,
        "created": store.manifest.created,
        "entry_count": len(store.entries),
        "dim": store.dim,
        "precision": store.precision,
        "kind": store.kind,
    }
    (directory / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def load_store(directory: str | Path) -> EmbeddingStore:
    """Load a store persisted by save_store. Values are trusted as normalized."""
    directory = Path(directory)
    meta = json.loads((directory / "manifest.json").read_text(encoding="utf-8"))
    dim, precision, raw = read_embedding_file(directory / "embeddings.bin")
    if dim != meta["dim"] or precision != meta["precision"]:
        raise FormatError(f"{directory}: manifest disagrees with embeddings.bin")
    entries = dict(raw)
    if len(entries) != meta["entry_count"]:
        raise FormatError(f"{directory}: manifest entry_count disagrees with data")
    manifest = StoreManifest(meta["corpus"], meta["created"], meta["entry_count"])
    return EmbeddingStore(
        dim=dim, precision=precision, kind=meta["kind"], entries=entries, manifest=manifest
    )


def read_corpus_jsonl(path: str | Path) -> list[CorpusRecord]:
    """Read a JSONL corpus; ids must be non-empty and unique."""
    records: list[CorpusRecord] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON: {exc.msg}", lineno) from exc
            if not isinstance(obj, dict) or "id" not in obj or "text" not in obj:
                raise ParseError("expected object with 'id' and 'text'", lineno)
            doc_id = str(obj["id"])
            if not doc_id:
                raise ParseError("empty id", lineno)
            if doc_id in seen:
                raise DuplicateDocId(f"duplicate id {doc_id!r} at line {lineno}")
            seen.add(doc_id)
            records.append(CorpusRecord(id=doc_id, text=str(obj["text"])))
    return records
