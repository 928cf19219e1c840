"""Compressed token-vector index: centroids + 2-bit residual codes.

Every document token is stored as (nearest centroid id, 2-bit per-dimension
residual code).  The centroid codebook comes from spherical k-means: assign
by maximum dot product, re-estimate each centroid as the normalized mean of
its members, re-seed empty clusters from the points farthest from their
assigned centroid.  Residuals are bucketed per dimension at the quartiles of
the corpus residual distribution; each bucket reconstructs to its
midpoint-of-bucket quantile.  Codes pack 4 per byte.

Search runs in three stages: (1) probe the `nprobe` nearest centroids per
query token and collect the documents on their inverted lists, (2) cap the
candidate set by an approximate score computed over centroids only, (3)
decompress the survivors and rerank by exact maxsim over the reconstructed,
re-normalized vectors.

Index directory layout::

    codebook.bin   magic LICB | u32 version | u32 K | u32 dim | K*dim float32
    residuals.bin  magic LIRC | u32 version | u32 dim
                   | dim*3 float32 bucket cutoffs | dim*4 float32 bucket values
                   | u64 doc count
                   | per doc: u16 id len | id | u16 token count
                     | token_count u32 centroid ids
                     | token_count * ceil(dim/4) packed code bytes
    ivf.bin        magic LIVF | u32 version | u32 K | u64 token count
                   | per centroid: u32 length | length u32 delta-encoded doc
                     indexes | length u16 token positions
    meta.json      parameters, seed, counts
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import BadCentroidId, DimMismatch, FormatError, InsufficientTokens
from .ranking import RankedList, ranked_from_scores
from .store import EmbeddingStore

CODEBOOK_MAGIC = b"LICB"
RESIDUAL_MAGIC = b"LIRC"
IVF_MAGIC = b"LIVF"
INDEX_FORMAT_VERSION = 1

DEFAULT_NPROBE = 4
DEFAULT_CANDIDATE_CAP = 8192
DEFAULT_ITERATIONS = 4
BUCKET_SAMPLE_LIMIT = 1 << 20

_ASSIGN_CHUNK = 4096


@dataclass
class Codebook:
    centroids: np.ndarray  # (K, dim) float32, unit rows
    seed: int

    @property
    def k(self) -> int:
        return self.centroids.shape[0]

    @property
    def dim(self) -> int:
        return self.centroids.shape[1]


@dataclass
class ResidualCodec:
    """Shared per-dimension bucket tables: 3 cutoffs and 4 reconstruction values."""

    cutoffs: np.ndarray  # (dim, 3) float32
    values: np.ndarray  # (dim, 4) float32


@dataclass
class ResidualCode:
    """One token: nearest centroid plus packed 2-bit residual codes."""

    centroid_id: int
    packed: bytes  # ceil(dim/4) bytes


@dataclass
class CompressedIndex:
    codebook: Codebook
    codec: ResidualCodec
    doc_ids: list[str]
    offsets: np.ndarray  # (n_docs + 1,) int64 token offsets
    centroid_ids: np.ndarray  # (total_tokens,) uint32
    packed_codes: np.ndarray  # (total_tokens, ceil(dim/4)) uint8
    ivf_offsets: np.ndarray  # (K + 1,) int64
    ivf_docs: np.ndarray  # (total_tokens,) int64, grouped by centroid
    ivf_positions: np.ndarray  # (total_tokens,) uint16
    params: dict

    @property
    def n_docs(self) -> int:
        return len(self.doc_ids)

    @property
    def total_tokens(self) -> int:
        return int(self.offsets[-1])

    def token_counts(self) -> np.ndarray:
        return np.diff(self.offsets)


def default_centroid_count(total_tokens: int) -> int:
    """round(16 * sqrt(total tokens)) rounded up to the next power of two."""
    if total_tokens < 1:
        raise ValueError("need at least one token")
    base = max(1, round(16.0 * math.sqrt(total_tokens)))
    return 1 << math.ceil(math.log2(base))


def _unit_rows_f32(m: np.ndarray) -> np.ndarray:
    m = np.asarray(m, dtype=np.float32)
    norms = np.linalg.norm(m.astype(np.float64), axis=1)
    norms[norms < 1e-12] = 1.0
    return (m / norms[:, None].astype(np.float32)).astype(np.float32)


def _stack_store(store: EmbeddingStore) -> tuple[np.ndarray, np.ndarray, list[str]]:
    doc_ids = store.doc_ids
    matrices = [store.entries[d].astype(np.float32) for d in doc_ids]
    counts = np.array([m.shape[0] for m in matrices], dtype=np.int64)
    offsets = np.zeros(len(doc_ids) + 1, dtype=np.int64)
    np.cumsum(counts, out=offsets[1:])
    return np.vstack(matrices), offsets, doc_ids


def _assign(tokens: np.ndarray, centroids: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Nearest centroid (max dot) per token; returns (assignments, best sims)."""
    n = tokens.shape[0]
    assign = np.empty(n, dtype=np.int64)
    best = np.empty(n, dtype=np.float32)
    ct = centroids.T
    for start in range(0, n, _ASSIGN_CHUNK):
        sims = tokens[start : start + _ASSIGN_CHUNK] @ ct
        idx = sims.argmax(axis=1)
        assign[start : start + _ASSIGN_CHUNK] = idx
        best[start : start + _ASSIGN_CHUNK] = np.take_along_axis(
            sims, idx[:, None], axis=1
        )[:, 0]
        del sims
    return assign, best


def train_codebook(
    store: EmbeddingStore, k: int, iterations: int = DEFAULT_ITERATIONS, seed: int = 0
) -> Codebook:
    """Spherical k-means over every token in the store; deterministic given seed."""
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    tokens, _, _ = _stack_store(store)
    total = tokens.shape[0]
    if k < 1:
        raise ValueError("k must be >= 1")
    if k > total:
        raise InsufficientTokens(f"requested {k} centroids from {total} tokens")

    rng = np.random.default_rng(seed)
    init = rng.choice(total, size=k, replace=False)
    centroids = _unit_rows_f32(tokens[init])

    for _ in range(iterations):
        assign, best = _assign(tokens, centroids)
        counts = np.bincount(assign, minlength=k)
        sums = np.empty((k, tokens.shape[1]), dtype=np.float64)
        for d in range(tokens.shape[1]):
            sums[:, d] = np.bincount(assign, weights=tokens[:, d], minlength=k)
        norms = np.linalg.norm(sums, axis=1)
        dead = (counts == 0) | (norms < 1e-12)
        norms[dead] = 1.0
        centroids = (sums / norms[:, None]).astype(np.float32)
        n_dead = int(dead.sum())
        if n_dead:
            # farthest points: lowest similarity to their assigned centroid
            farthest = np.argsort(best, kind="stable")[:n_dead]
            centroids[np.flatnonzero(dead)] = _unit_rows_f32(tokens[farthest])
    return Codebook(centroids=centroids, seed=seed)


def _quantize(residuals: np.ndarray, cutoffs: np.ndarray) -> np.ndarray:
    """Bucket each residual value: code = number of cutoffs strictly below it."""
    n = residuals.shape[0]
    codes = np.empty(residuals.shape, dtype=np.uint8)
    for start in range(0, n, _ASSIGN_CHUNK * 8):
        chunk = residuals[start : start + _ASSIGN_CHUNK * 8]
        codes[start : start + _ASSIGN_CHUNK * 8] = (
            (chunk[:, :, None] > cutoffs[None, :, :]).sum(axis=2).astype(np.uint8)
        )
    return codes


def pack_codes(codes: np.ndarray) -> np.ndarray:
    """Pack 2-bit codes 4 per byte (value j at bit offset 2*(j % 4))."""
    codes = np.asarray(codes, dtype=np.uint8)
    n, dim = codes.shape
    padded_dim = 4 * ((dim + 3) // 4)
    if padded_dim != dim:
        codes = np.concatenate(
            [codes, np.zeros((n, padded_dim - dim), dtype=np.uint8)], axis=1
        )
    quads = codes.reshape(n, padded_dim // 4, 4)
    shifts = np.array([0, 2, 4, 6], dtype=np.uint8)
    return (quads << shifts).sum(axis=2, dtype=np.uint16).astype(np.uint8)


def unpack_codes(packed: np.ndarray, dim: int) -> np.ndarray:
    """Inverse of pack_codes; returns (n, dim) uint8 values in {0, 1, 2, 3}."""
    packed = np.asarray(packed, dtype=np.uint8)
    shifts = np.array([0, 2, 4, 6], dtype=np.uint8)
    quads = (packed[:, :, None] >> shifts) & 3
    return quads.reshape(packed.shape[0], -1)[:, :dim]


def compress(store: EmbeddingStore, codebook: Codebook) -> CompressedIndex:
    """Quantize every token of the store against the codebook."""
    tokens, offsets, doc_ids = _stack_store(store)
    if tokens.shape[1] != codebook.dim:
        raise DimMismatch(
            f"store dim {tokens.shape[1]} != codebook dim {codebook.dim}"
        )
    total = tokens.shape[0]
    assign, _ = _assign(tokens, codebook.centroids)
    residuals = tokens - codebook.centroids[assign]

    if total > BUCKET_SAMPLE_LIMIT:
        rng = np.random.default_rng(codebook.seed)
        sample = residuals[np.sort(rng.choice(total, BUCKET_SAMPLE_LIMIT, replace=False))]
    else:
        sample = residuals
    cutoffs = np.quantile(sample, [0.25, 0.5, 0.75], axis=0).T.astype(np.float32)
    values = np.quantile(sample, [0.125, 0.375, 0.625, 0.875], axis=0).T.astype(np.float32)
    codec = ResidualCodec(cutoffs=cutoffs, values=values)

    codes = _quantize(residuals, cutoffs)
    packed = pack_codes(codes)

    # inverted lists: tokens grouped by centroid, each list in (doc, position) order
    token_doc = np.repeat(np.arange(len(doc_ids), dtype=np.int64), np.diff(offsets))
    token_pos = (np.arange(total, dtype=np.int64) - offsets[token_doc]).astype(np.uint16)
    order = np.argsort(assign, kind="stable")
    ivf_offsets = np.zeros(codebook.k + 1, dtype=np.int64)
    np.cumsum(np.bincount(assign, minlength=codebook.k), out=ivf_offsets[1:])

    return CompressedIndex(
        codebook=codebook,
        codec=codec,
        doc_ids=doc_ids,
        offsets=offsets,
        centroid_ids=assign.astype(np.uint32),
        packed_codes=packed,
        ivf_offsets=ivf_offsets,
        ivf_docs=token_doc[order],
        ivf_positions=token_pos[order],
        params={
            "k_centroids": codebook.k,
            "dim": codebook.dim,
            "seed": codebook.seed,
            "nbits": 2,
            "bucket_sample_limit": BUCKET_SAMPLE_LIMIT,
        },
    )


def _reconstruct(
    centroid_ids: np.ndarray, codes: np.ndarray, codebook: Codebook, codec: ResidualCodec
) -> np.ndarray:
    """Centroid + representative residual per dimension, unit-normalized (float32)."""
    dim = codebook.dim
    recon = codebook.centroids[centroid_ids] + codec.values[np.arange(dim)[None, :], codes]
    return _unit_rows_f32(recon)


def decompress(code: ResidualCode, codebook: Codebook, codec: ResidualCodec) -> np.ndarray:
    """Reconstruct a single token vector from its residual code."""
    if not 0 <= code.centroid_id < codebook.k:
        raise BadCentroidId(f"centroid id {code.centroid_id} not in [0, {codebook.k})")
    packed = np.frombuffer(code.packed, dtype=np.uint8)[None, :]
    codes = unpack_codes(packed, codebook.dim)
    return _reconstruct(
        np.array([code.centroid_id]), codes, codebook, codec
    )[0]


def token_code(index: CompressedIndex, doc_index: int, position: int) -> ResidualCode:
    """The stored ResidualCode of one token, addressed by document and position."""
    t = int(index.offsets[doc_index]) + position
    return ResidualCode(
        centroid_id=int(index.centroid_ids[t]), packed=index.packed_codes[t].tobytes()
    )


def _segment_ranges(offsets: np.ndarray, segments: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Flat token indexes for the given segments plus boundaries between them."""
    lengths = (offsets[segments + 1] - offsets[segments]).astype(np.int64)
    bounds = np.zeros(len(segments) + 1, dtype=np.int64)
    np.cumsum(lengths, out=bounds[1:])
    flat = np.repeat(offsets[segments] - bounds[:-1], lengths) + np.arange(bounds[-1])
    return flat, bounds


def search_compressed(
    index: CompressedIndex,
    q: np.ndarray,
    k: int,
    nprobe: int = DEFAULT_NPROBE,
    candidate_cap: int = DEFAULT_CANDIDATE_CAP,
    query_id: str = "",
) -> RankedList:
    """Probe inverted lists, cap candidates by centroid-level score, rerank exactly."""
    if k < 1 or nprobe < 1:
        raise ValueError("k and nprobe must be >= 1")
    if candidate_cap < k:
        raise ValueError("candidate_cap must be >= k")
    q = np.asarray(q, dtype=np.float64)
    if q.ndim != 2 or q.shape[1] != index.codebook.dim:
        raise DimMismatch(f"query shape {q.shape} does not match index dim {index.codebook.dim}")

    centroids64 = index.codebook.centroids.astype(np.float64)
    qsims = q @ centroids64.T  # (q_tokens, K)
    nprobe = min(nprobe, index.codebook.k)
    probed = np.argsort(-qsims, axis=1, kind="stable")[:, :nprobe]

    # stage 1: all documents appearing on the probed centroids' inverted lists
    pieces = [
        index.ivf_docs[index.ivf_offsets[c] : index.ivf_offsets[c + 1]]
        for c in np.unique(probed)
    ]
    if not pieces:
        return RankedList(query_id=query_id)
    candidates = np.unique(np.concatenate(pieces))
    if candidates.size == 0:
        return RankedList(query_id=query_id)

    # stage 2: approximate score = maxsim over centroid vectors only
    if candidates.size > candidate_cap:
        flat, bounds = _segment_ranges(index.offsets, candidates)
        approx_sims = qsims[:, index.centroid_ids[flat].astype(np.int64)]
        approx = np.maximum.reduceat(approx_sims, bounds[:-1], axis=1).sum(axis=0)
        keep = np.argsort(-approx, kind="stable")[:candidate_cap]
        candidates = np.sort(candidates[keep])

    # stage 3: decompress candidates and rerank by exact maxsim
    flat, bounds = _segment_ranges(index.offsets, candidates)
    codes = unpack_codes(index.packed_codes[flat], index.codebook.dim)
    recon = _reconstruct(
        index.centroid_ids[flat].astype(np.int64), codes, index.codebook, index.codec
    ).astype(np.float64)
    sims = q @ recon.T
    scores = np.maximum.reduceat(sims, bounds[:-1], axis=1).sum(axis=0)
    ids = [index.doc_ids[c] for c in candidates]
    return ranked_from_scores(query_id, ids, scores, k=k)


def save_compressed(index: CompressedIndex, directory: str | Path) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    k, dim = index.codebook.k, index.codebook.dim

    with open(directory / "codebook.bin", "wb") as fh:
        fh.write(struct.pack("<4sIII", CODEBOOK_MAGIC, INDEX_FORMAT_VERSION, k, dim))
        fh.write(np.ascontiguousarray(index.codebook.centroids, dtype="<f4").tobytes())

    with open(directory / "residuals.bin", "wb") as fh:
        fh.write(struct.pack("<4sII", RESIDUAL_MAGIC, INDEX_FORMAT_VERSION, dim))
        fh.write(np.ascontiguousarray(index.codec.cutoffs, dtype="<f4").tobytes())
        fh.write(np.ascontiguousarray(index.codec.values, dtype="<f4").tobytes())
        fh.write(struct.pack("<Q", index.n_docs))
        for i, doc_id in enumerate(index.doc_ids):
            lo, hi = index.offsets[i], index.offsets[i + 1]
            id_bytes = doc_id.encode("utf-8")
            fh.write(struct.pack("<H", len(id_bytes)))
            fh.write(id_bytes)
            fh.write(struct.pack("<H", int(hi - lo)))
            fh.write(np.ascontiguousarray(index.centroid_ids[lo:hi], dtype="<u4").tobytes())
            fh.write(np.ascontiguousarray(index.packed_codes[lo:hi]).tobytes())

    with open(directory / "ivf.bin", "wb") as fh:
        fh.write(struct.pack("<4sIIQ", IVF_MAGIC, INDEX_FORMAT_VERSION, k, index.total_tokens))
        for c in range(k):
            lo, hi = index.ivf_offsets[c], index.ivf_offsets[c + 1]
            docs = index.ivf_docs[lo:hi]
            deltas = np.diff(docs, prepend=np.int64(0)) if docs.size else docs
            fh.write(struct.pack("<I", int(hi - lo)))
            fh.write(np.ascontiguousarray(deltas, dtype="<u4").tobytes())
            fh.write(np.ascontiguousarray(index.ivf_positions[lo:hi], dtype="<u2").tobytes())

    meta = dict(index.params)
    meta.update(
        {
            "format_version": INDEX_FORMAT_VERSION,
            "mode": "compressed",
            "doc_count": index.n_docs,
            "token_count": index.total_tokens,
        }
    )
    (directory / "meta.json").write_text(
        json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def _expect(cond: bool, path: Path, message: str) -> None:
    if not cond:
        raise FormatError(f"{path}: {message}")


def load_compressed(directory: str | Path) -> CompressedIndex:
    directory = Path(directory)
    meta = json.loads((directory / "meta.json").read_text(encoding="utf-8"))

    path = directory / "codebook.bin"
    data = path.read_bytes()
    magic, version, k, dim = struct.unpack_from("<4sIII", data, 0)
    _expect(magic == CODEBOOK_MAGIC, path, f"bad magic {magic!r}")
    _expect(version == INDEX_FORMAT_VERSION, path, f"unsupported version {version}")
    centroids = np.frombuffer(data, dtype="<f4", count=k * dim, offset=16).reshape(k, dim).copy()
    codebook = Codebook(centroids=centroids, seed=int(meta["seed"]))

    path = directory / "residuals.bin"
    data = path.read_bytes()
    magic, version, rdim = struct.unpack_from("<4sII", data, 0)
    _expect(magic == RESIDUAL_MAGIC, path, f"bad magic {magic!r}")
    _expect(rdim == dim, path, f"dim {rdim} disagrees with codebook dim {dim}")
    offset = 12
    cutoffs = np.frombuffer(data, dtype="<f4", count=dim * 3, offset=offset).reshape(dim, 3).copy()
    offset += dim * 3 * 4
    values = np.frombuffer(data, dtype="<f4", count=dim * 4, offset=offset).reshape(dim, 4).copy()
    offset += dim * 4 * 4
    (n_docs,) = struct.unpack_from("<Q", data, offset)
    offset += 8
    packed_width = (dim + 3) // 4
    doc_ids: list[str] = []
    counts: list[int] = []
    cid_parts: list[np.ndarray] = []
    code_parts: list[np.ndarray] = []
    for _ in range(n_docs):
        (id_len,) = struct.unpack_from("<H", data, offset)
        offset += 2
        doc_ids.append(data[offset : offset + id_len].decode("utf-8"))
        offset += id_len
        (tcount,) = struct.unpack_from("<H", data, offset)
        offset += 2
        cid_parts.append(np.frombuffer(data, dtype="<u4", count=tcount, offset=offset))
        offset += tcount * 4
        code_parts.append(
            np.frombuffer(data, dtype=np.uint8, count=tcount * packed_width, offset=offset)
        )
        offset += tcount * packed_width
        counts.append(tcount)
    _expect(offset == len(data), path, "trailing bytes")
    offsets = np.zeros(n_docs + 1, dtype=np.int64)
    np.cumsum(np.asarray(counts, dtype=np.int64), out=offsets[1:])
    centroid_ids = np.concatenate(cid_parts).astype(np.uint32) if cid_parts else np.zeros(0, np.uint32)
    packed_codes = (
        np.concatenate(code_parts).reshape(-1, packed_width)
        if code_parts
        else np.zeros((0, packed_width), np.uint8)
    )

    path = directory / "ivf.bin"
    data = path.read_bytes()
    magic, version, ik, total = struct.unpack_from("<4sIIQ", data, 0)
    _expect(magic == IVF_MAGIC, path, f"bad magic {magic!r}")
    _expect(ik == k, path, f"K {ik} disagrees with codebook K {k}")
    offset = 20
    ivf_offsets = np.zeros(k + 1, dtype=np.int64)
    doc_lists: list[np.ndarray] = []
    pos_lists: list[np.ndarray] = []
    for c in range(k):
        (length,) = struct.unpack_from("<I", data, offset)
        offset += 4
        deltas = np.frombuffer(data, dtype="<u4", count=length, offset=offset).astype(np.int64)
        offset += length * 4
        positions = np.frombuffer(data, dtype="<u2", count=length, offset=offset)
        offset += length * 2
        doc_lists.append(np.cumsum(deltas) if length else deltas)
        pos_lists.append(positions)
        ivf_offsets[c + 1] = ivf_offsets[c] + length
    _expect(offset == len(data), path, "trailing bytes")
    _expect(int(ivf_offsets[-1]) == total, path, "token count mismatch")

    return CompressedIndex(
        codebook=codebook,
        codec=ResidualCodec(cutoffs=cutoffs, values=values),
        doc_ids=doc_ids,
        offsets=offsets,
        centroid_ids=centroid_ids,
        packed_codes=packed_codes,
        ivf_offsets=ivf_offsets,
        ivf_docs=np.concatenate(doc_lists) if doc_lists else np.zeros(0, np.int64),
        ivf_positions=np.concatenate(pos_lists).astype(np.uint16) if pos_lists else np.zeros(0, np.uint16),
        params={key: meta[key] for key in meta if key not in ("doc_count", "token_count", "mode")},
    )
