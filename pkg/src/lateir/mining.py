"""Hard-negative mining and n-way training-example construction.

Both mining recipes share one windowing rule: retrieve deep (110 by
default), discard the top 10 ranks as likely unlabeled positives, then
sample uniformly without replacement from the next 100 — 25 negatives per
query for the dense recipe, 10 for the BM25 recipe.  Annotated positives
are excluded from the pool outright.

Sampling uses stdlib ``random.Random`` seeded per query from
(global seed, query id), so output is reproducible byte-for-byte and
independent of the order queries are processed in.

Teacher scores ride along as a (query id, document id) -> score table.
Transposition copies scores onto a translated pair universe that shares the
same id space; pairs with no source score are reported, never fabricated.
An n-way example is one query with a positive at index 0 plus n-1 distinct
negatives, each carrying its teacher score.
"""

from __future__ import annotations

import hashlib
import json
import math
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .bm25 import BM25Index, search_bm25
from .errors import (
    EmptyRanking,
    InsufficientCandidates,
    MissingRun,
    MissingTeacherScore,
    ParseError,
)
from .ranking import RankedList

DEFAULT_NWAY = 32


@dataclass
class MiningConfig:
    retrieve_depth: int = 110
    discard_top: int = 10
    sample_count_dense: int = 25
    sample_count_bm25: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.discard_top >= self.retrieve_depth:
            raise ValueError("discard_top must be < retrieve_depth")
        pool = self.retrieve_depth - self.discard_top
        if self.sample_count_dense > pool or self.sample_count_bm25 > pool:
            raise ValueError("sample counts must be <= retrieve_depth - discard_top")

    @property
    def pool_size(self) -> int:
        return self.retrieve_depth - self.discard_top


def derive_seed(seed: int, query_id: str) -> int:
    """Stable per-query seed so parallel mining order cannot change output."""
    digest = hashlib.sha256(f"{seed}\x1f{query_id}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def mine_window(
    ranked: RankedList,
    positives: set[str],
    discard_top: int,
    pool_size: int,
    sample_count: int,
    seed: int,
) -> list[str]:
    """Sample negatives from ranks (discard_top, discard_top + pool_size].

    Discards the top `discard_top` ranks, removes annotated positives from
    the remaining pool, and samples `sample_count` ids uniformly without
    replacement.  A pool smaller than `sample_count` is returned whole.
    """
    if sample_count > pool_size:
        raise ValueError("sample_count must be <= pool_size")
    if len(ranked.entries) < discard_top + 1:
        raise EmptyRanking(
            f"ranking for {ranked.query_id!r} has {len(ranked.entries)} entries, "
            f"need more than {discard_top}"
        )
    window = ranked.entries[discard_top : discard_top + pool_size]
    pool = [doc_id for doc_id, _ in window if doc_id not in positives]
    if len(pool) <= sample_count:
        return list(pool)
    return random.Random(seed).sample(pool, sample_count)


def mine_dense(
    queries: Iterable[str],
    runs: Mapping[str, RankedList],
    positives: Mapping[str, set[str]],
    cfg: MiningConfig,
) -> dict[str, list[str]]:
    """Dense-retriever recipe: window (10, 100) and 25 samples per query."""
    out: dict[str, list[str]] = {}
    for qid in queries:
        run = runs.get(qid)
        if run is None:
            raise MissingRun(qid)
        out[qid] = mine_window(
            run,
            set(positives.get(qid, ())),
            discard_top=cfg.discard_top,
            pool_size=cfg.pool_size,
            sample_count=cfg.sample_count_dense,
            seed=derive_seed(cfg.seed, qid),
        )
    return out


def mine_bm25(
    queries: Mapping[str, str],
    index: BM25Index,
    positives: Mapping[str, set[str]],
    cfg: MiningConfig,
) -> dict[str, list[str]]:
    """BM25 recipe: retrieve to depth 110 internally, window (10, 100), 10 samples."""
    out: dict[str, list[str]] = {}
    for qid, text in queries.items():
        run = search_bm25(index, text, index.tokenizer, k=cfg.retrieve_depth, query_id=qid)
        out[qid] = mine_window(
            run,
            set(positives.get(qid, ())),
            discard_top=cfg.discard_top,
            pool_size=cfg.pool_size,
            sample_count=cfg.sample_count_bm25,
            seed=derive_seed(cfg.seed, qid),
        )
    return out


@dataclass
class TeacherScoreTable:
    """(query id, document id) -> teacher relevance score.

    Raw text of each score is kept alongside the parsed float so that
    copying scores to a new file is byte-exact.
    """

    scores: dict[tuple[str, str], float] = field(default_factory=dict)
    raw: dict[tuple[str, str], str] = field(default_factory=dict)
    source: str = ""

    def __len__(self) -> int:
        return len(self.scores)

    def get(self, query_id: str, doc_id: str) -> float | None:
        return self.scores.get((query_id, doc_id))

    def add(self, query_id: str, doc_id: str, score: float, raw: str | None = None) -> None:
        key = (query_id, doc_id)
        if key in self.scores:
            raise ParseError(f"duplicate pair {key!r}")
        if not math.isfinite(score):
            raise ParseError(f"non-finite score for pair {key!r}")
        self.scores[key] = score
        self.raw[key] = raw if raw is not None else repr(score)

    @classmethod
    def from_tsv(cls, path: str | Path, source: str | None = None) -> "TeacherScoreTable":
        table = cls(source=source if source is not None else str(path))
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.rstrip("\n")
                if not line:
                    continue
                parts = line.split("\t")
                if len(parts) != 3:
                    raise ParseError(f"expected 3 tab-separated fields, got {len(parts)}", lineno)
                qid, did, raw_score = parts
                try:
                    score = float(raw_score)
                except ValueError as exc:
                    raise ParseError(f"bad score {raw_score!r}", lineno) from exc
                key = (qid, did)
                if key in table.scores:
                    raise ParseError(f"duplicate pair {key!r}", lineno)
                if not math.isfinite(score):
                    raise ParseError(f"non-finite score for pair {key!r}", lineno)
                table.scores[key] = score
                table.raw[key] = raw_score
        return table

    def write_tsv(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for (qid, did), score in self.scores.items():
                fh.write(f"{qid}\t{did}\t{self.raw.get((qid, did), repr(score))}\n")


def transpose_scores(
    english_scores: TeacherScoreTable,
    pair_universe: Iterable[tuple[str, str]],
) -> tuple[TeacherScoreTable, list[tuple[str, str]]]:
    """Copy scores onto the pairs of a translated universe sharing the id space.

    Returns (table restricted to the universe, pairs with no source score).
    Scores are copied unchanged, byte-exactly when written back out.
    """
    out = TeacherScoreTable(source=english_scores.source)
    dropped: list[tuple[str, str]] = []
    seen: set[tuple[str, str]] = set()
    for pair in pair_universe:
        if pair in seen:
            continue
        seen.add(pair)
        score = english_scores.scores.get(pair)
        if score is None:
            dropped.append(pair)
            continue
        out.scores[pair] = score
        out.raw[pair] = english_scores.raw.get(pair, repr(score))
    return out, dropped


@dataclass
class NWayExample:
    """One query, a positive at index 0, n-1 negatives, aligned teacher scores."""

    query_id: str
    passage_ids: list[str]
    teacher_scores: list[float]

    def __post_init__(self):
        if len(self.passage_ids) != len(self.teacher_scores):
            raise ValueError("passage ids and scores must align")
        if len(set(self.passage_ids)) != len(self.passage_ids):
            raise ValueError("passage ids must be distinct")

    @property
    def n(self) -> int:
        return len(self.passage_ids)


def build_nway(
    query_id: str,
    positive_id: str,
    positive_score: float,
    candidates: Sequence[tuple[str, float]],
    n: int = DEFAULT_NWAY,
    keep_set: frozenset[str] | set[str] = frozenset(),
    seed: int = 0,
) -> NWayExample:
    """Assemble one n-way example from scored negative candidates.

    Candidates present in `keep_set` are taken first, in candidate order
    (up to n-1); the remainder is filled by uniform seeded sampling from
    the other candidates.
    """
    if n < 2:
        raise ValueError("n must be >= 2")
    if positive_score is None or not math.isfinite(positive_score):
        raise MissingTeacherScore((query_id, positive_id))

    deduped: list[tuple[str, float]] = []
    seen: set[str] = {positive_id}
    for doc_id, score in candidates:
        if doc_id in seen:
            continue
        if score is None or not math.isfinite(score):
            raise MissingTeacherScore((query_id, doc_id))
        seen.add(doc_id)
        deduped.append((doc_id, float(score)))
    if len(deduped) < n - 1:
        raise InsufficientCandidates(
            f"query {query_id!r}: {len(deduped)} distinct candidates, need {n - 1}"
        )

    kept = [c for c in deduped if c[0] in keep_set][:n - 1]
    chosen = list(kept)
    remaining = [c for c in deduped if c[0] not in keep_set]
    fill = (n - 1) - len(chosen)
    if fill > 0:
        chosen.extend(random.Random(derive_seed(seed, query_id)).sample(remaining, fill))

    passage_ids = [positive_id] + [doc_id for doc_id, _ in chosen]
    teacher_scores = [float(positive_score)] + [score for _, score in chosen]
    return NWayExample(query_id=query_id, passage_ids=passage_ids, teacher_scores=teacher_scores)


def write_nway_jsonl(path: str | Path, examples: Iterable[NWayExample]) -> int:
    count = 0
    with open(path, "w", encoding="utf-8") as fh:
        for ex in examples:
            fh.write(
                json.dumps(
                    {"qid": ex.query_id, "passages": ex.passage_ids, "scores": ex.teacher_scores},
                    ensure_ascii=False,
                )
                + "\n"
            )
            count += 1
    return count


def read_nway_jsonl(path: str | Path) -> list[NWayExample]:
    out: list[NWayExample] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON: {exc.msg}", lineno) from exc
            out.append(
                NWayExample(
                    query_id=str(obj["qid"]),
                    passage_ids=[str(p) for p in obj["passages"]],
                    teacher_scores=[float(s) for s in obj["scores"]],
                )
            )
    return out


def write_negatives_jsonl(path: str | Path, rows: Iterable[dict]) -> int:
    """Mining output: one {qid, positives, *_negatives, seed} object per line."""
    count = 0
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, ensure_ascii=False) + "\n")
            count += 1
    return count


def read_negatives_jsonl(path: str | Path) -> list[dict]:
    out: list[dict] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON: {exc.msg}", lineno) from exc
            if "qid" not in obj:
                raise ParseError("missing 'qid'", lineno)
            out.append(obj)
    return out
