"""Ranked retrieval output and TREC run file I/O.

A RankedList holds (document id, score) pairs in descending score order;
equal scores are ordered by ascending document id so output is
deterministic.  Run files use the TREC format::

    qid Q0 docid rank score run_tag

with ranks starting at 1.  Scores are written with repr() so they
round-trip exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .errors import ParseError


@dataclass
class RankedList:
    query_id: str
    entries: list[tuple[str, float]] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.entries)

    def doc_ids(self) -> list[str]:
        return [doc_id for doc_id, _ in self.entries]


def ranked_from_scores(
    query_id: str,
    doc_ids: Sequence[str],
    scores: Sequence[float],
    k: int | None = None,
) -> RankedList:
    """Build a RankedList from parallel id/score sequences.

    Sorts by descending score, breaking ties by ascending document id;
    truncates to k when given.
    """
    order = sorted(zip(doc_ids, scores), key=lambda e: (-e[1], e[0]))
    if k is not None:
        order = order[:k]
    return RankedList(query_id=query_id, entries=[(d, float(s)) for d, s in order])


def write_trec_run(path: str | Path, runs: Iterable[RankedList], tag: str = "lateir") -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for run in runs:
            for rank, (doc_id, score) in enumerate(run.entries, start=1):
                fh.write(f"{run.query_id} Q0 {doc_id} {rank} {score!r} {tag}\n")


def read_trec_run(path: str | Path) -> dict[str, list[tuple[str, int, float]]]:
    """Read a TREC run file into {qid: [(docid, rank, score), ...]} in file order."""
    out: dict[str, list[tuple[str, int, float]]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 6:
                raise ParseError(f"expected 6 fields, got {len(parts)}", lineno)
            qid, _, doc_id, rank_s, score_s, _tag = parts
            try:
                rank = int(rank_s)
                score = float(score_s)
            except ValueError as exc:
                raise ParseError(f"bad rank/score: {exc}", lineno) from exc
            out.setdefault(qid, []).append((doc_id, rank, score))
    return out


def run_lists_from_trec(path: str | Path) -> dict[str, RankedList]:
    """Read a run file and canonicalize each query's list (score desc, id asc)."""
    raw = read_trec_run(path)
    out: dict[str, RankedList] = {}
    for qid, rows in raw.items():
        ids = [doc_id for doc_id, _, _ in rows]
        if len(set(ids)) != len(ids):
            raise ParseError(f"duplicate document in run for query {qid!r}")
        out[qid] = ranked_from_scores(qid, ids, [score for _, _, score in rows])
    return out
