"""Command-line entry point.

One binary exposes the whole pipeline: ingest, index, search, score, bm25,
mine, transpose, nway, and eval, plus a `pipeline` command that runs a
stage straight from a config file.

Options resolve in precedence order: explicit flag > config file value >
built-in default.  The config file is INI-style with one section per stage
(`[ingest]`, `[bm25-build]`, ...); keys are the long flag names without
dashes.  All randomness flows from explicit seeds.

Every command that writes an output also writes a manifest recording the
tool version, parameters, and SHA-256 of each input, so identical inputs
and config reproduce identical output bytes.
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import json
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Sequence

from . import __version__
from .bm25 import Tokenizer, build_bm25, load_bm25, save_bm25, search_bm25
from .compressed import (
    DEFAULT_CANDIDATE_CAP,
    DEFAULT_ITERATIONS,
    DEFAULT_NPROBE,
    compress,
    default_centroid_count,
    load_compressed,
    save_compressed,
    search_compressed,
    train_codebook,
)
from .errors import (
    ConfigError,
    EngineError,
    InsufficientCandidates,
    MissingTeacherScore,
)
from .evaluation import MetricSpec, evaluate, load_qrels, write_report
from .exact import EXACT_META_NAME, build_exact, load_exact, save_exact, search_exact
from .mining import (
    DEFAULT_NWAY,
    MiningConfig,
    TeacherScoreTable,
    build_nway,
    mine_bm25,
    mine_dense,
    read_negatives_jsonl,
    transpose_scores,
    write_negatives_jsonl,
    write_nway_jsonl,
)
from .ranking import run_lists_from_trec, write_trec_run
from .scoring import maxsim
from .store import ingest_embeddings, load_store, read_corpus_jsonl, save_store

FORMAT_VERSIONS = {"embedding": 1, "index": 1, "bm25": 1}


@dataclass(frozen=True)
class Opt:
    name: str
    type: Callable = str
    default: Any = None
    required: bool = False
    multi: bool = False
    flag: bool = False
    choices: tuple[str, ...] | None = None
    help: str = ""

    @property
    def dest(self) -> str:
        return self.name.replace("-", "_")


def _sha256_file(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


def _sha256_path(path: Path) -> str:
    """Content hash of a file, or of a directory's files by sorted name."""
    if path.is_dir():
        digest = hashlib.sha256()
        for child in sorted(p for p in path.rglob("*") if p.is_file()):
            digest.update(child.relative_to(path).as_posix().encode("utf-8"))
            digest.update(bytes.fromhex(_sha256_file(child)))
        return digest.hexdigest()
    return _sha256_file(path)


def _write_manifest(out: Path, command: str, inputs: dict[str, Path], params: dict) -> Path:
    manifest = {
        "command": command,
        "tool_version": __version__,
        "format_versions": FORMAT_VERSIONS,
        "inputs": {
            name: {"path": str(path), "sha256": _sha256_path(Path(path))}
            for name, path in inputs.items()
        },
        "parameters": params,
    }
    target = out / "run-manifest.json" if out.is_dir() else Path(str(out) + ".manifest.json")
    target.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return target


def _say(message: str) -> None:
    print(message, file=sys.stderr)


def _bool_from_config(raw: str) -> bool:
    value = raw.strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {raw!r}")


def _resolve_options(
    command: str, opts: Sequence[Opt], ns: argparse.Namespace
) -> dict[str, Any]:
    given = vars(ns)
    config = None
    config_path = given.get("config")
    if config_path:
        config = configparser.ConfigParser(interpolation=None)
        read = config.read(config_path, encoding="utf-8")
        if not read:
            raise ConfigError(f"config file not found: {config_path}")
    resolved: dict[str, Any] = {}
    for opt in opts:
        value = given.get(opt.dest)
        if value is None and config is not None and config.has_option(command, opt.name):
            raw = config.get(command, opt.name)
            if opt.flag:
                value = _bool_from_config(raw)
            elif opt.multi:
                value = [opt.type(v) for v in raw.split()]
            else:
                value = opt.type(raw)
        if value is None:
            if opt.required:
                raise ConfigError(f"{command}: missing required option '--{opt.name}'")
            value = opt.default
        if opt.choices is not None and value is not None and value not in opt.choices:
            raise ConfigError(f"{command}: '--{opt.name}' must be one of {opt.choices}")
        resolved[opt.dest] = value
    return resolved


def _positives_from_qrels(qrels: dict[str, dict[str, int]]) -> dict[str, set[str]]:
    return {qid: {d for d, g in judged.items() if g > 0} for qid, judged in qrels.items()}


# ----------------------------------------------------------------------
# command handlers
# ----------------------------------------------------------------------

KIND_NAMES = {"doc": "document", "query": "query"}


def cmd_ingest(o: dict) -> int:
    corpus = read_corpus_jsonl(o["corpus"])
    corpus_ids = {r.id for r in corpus}
    store = ingest_embeddings(o["embeddings"], KIND_NAMES[o["kind"]])
    unknown = [doc_id for doc_id in store.entries if doc_id not in corpus_ids]
    if unknown:
        raise ConfigError(
            f"{len(unknown)} embedding ids are not in the corpus (first: {unknown[0]!r})"
        )
    store.manifest.corpus = Path(o["corpus"]).stem
    out = Path(o["out"])
    save_store(store, out)
    _write_manifest(
        out,
        "ingest",
        {"corpus": o["corpus"], "embeddings": o["embeddings"]},
        {"kind": o["kind"], "dim": store.dim, "precision": store.precision,
         "entries": len(store)},
    )
    _say(f"ingested {len(store)} {o['kind']} matrices (dim {store.dim}) into {out}")
    return 0


def cmd_index(o: dict) -> int:
    store = load_store(o["store"])
    out = Path(o["out"])
    if o["mode"] == "exact":
        index = build_exact(store, o["precision"])
        save_exact(index, out)
        params = {"mode": "exact", "precision": o["precision"], "docs": index.n_docs}
    else:
        total = store.total_tokens
        if o["k_centroids"] == "auto":
            k = default_centroid_count(total)
            while k > total:
                k //= 2
        else:
            k = int(o["k_centroids"])
        codebook = train_codebook(store, k, iterations=o["iterations"], seed=o["seed"])
        index = compress(store, codebook)
        index.params["iterations"] = o["iterations"]
        save_compressed(index, out)
        params = {
            "mode": "compressed",
            "k_centroids": k,
            "iterations": o["iterations"],
            "seed": o["seed"],
            "docs": index.n_docs,
            "tokens": index.total_tokens,
        }
    _write_manifest(out, "index", {"store": o["store"]}, params)
    _say(f"built {o['mode']} index over {len(store)} documents in {out}")
    return 0


def _detect_mode(index_dir: Path) -> str:
    if (index_dir / "codebook.bin").exists():
        return "compressed"
    if (index_dir / EXACT_META_NAME).exists():
        return "exact"
    raise ConfigError(f"{index_dir} does not contain a recognizable index")


def cmd_search(o: dict) -> int:
    index_dir = Path(o["index"])
    mode = o["mode"] if o["mode"] != "auto" else _detect_mode(index_dir)
    queries = load_store(o["queries"])
    runs = []
    if mode == "exact":
        index = load_exact(index_dir)
        for qid, matrix in queries.entries.items():
            runs.append(search_exact(index, matrix, o["k"], query_id=qid))
    else:
        index = load_compressed(index_dir)
        for qid, matrix in queries.entries.items():
            runs.append(
                search_compressed(
                    index,
                    matrix,
                    o["k"],
                    nprobe=o["nprobe"],
                    candidate_cap=o["candidate_cap"],
                    query_id=qid,
                )
            )
    out = Path(o["out"])
    write_trec_run(out, runs, tag=o["run_tag"])
    _write_manifest(
        out,
        "search",
        {"index": o["index"], "queries": o["queries"]},
        {"mode": mode, "k": o["k"], "nprobe": o["nprobe"],
         "candidate_cap": o["candidate_cap"], "run_tag": o["run_tag"]},
    )
    _say(f"searched {len(runs)} queries ({mode}) into {out}")
    return 0


def cmd_score(o: dict) -> int:
    query_store = load_store(o["query_store"])
    doc_store = load_store(o["doc_store"])
    lines = []
    with open(o["pairs"], encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ConfigError(f"{o['pairs']}:{lineno}: expected 'qid<TAB>did'")
            qid, did = parts
            if qid not in query_store.entries:
                raise ConfigError(f"{o['pairs']}:{lineno}: unknown query id {qid!r}")
            if did not in doc_store.entries:
                raise ConfigError(f"{o['pairs']}:{lineno}: unknown document id {did!r}")
            score = maxsim(query_store.entries[qid], doc_store.entries[did])
            lines.append(f"{qid}\t{did}\t{score!r}\n")
    if o["out"]:
        Path(o["out"]).write_text("".join(lines), encoding="utf-8")
        _write_manifest(
            Path(o["out"]),
            "score",
            {"query-store": o["query_store"], "doc-store": o["doc_store"], "pairs": o["pairs"]},
            {"pairs_scored": len(lines), "similarity": "maxsim, float64 accumulation"},
        )
        _say(f"scored {len(lines)} pairs into {o['out']}")
    else:
        sys.stdout.write("".join(lines))
    return 0


def cmd_bm25_build(o: dict) -> int:
    tokenizer = Tokenizer(scheme=o["tokenizer"].replace("-", "_"), lowercase=not o["no_lowercase"])
    corpus = read_corpus_jsonl(o["corpus"])
    index = build_bm25(corpus, tokenizer, k1=o["k1"], b=o["b"])
    out = Path(o["out"])
    save_bm25(index, out)
    _write_manifest(
        out,
        "bm25-build",
        {"corpus": o["corpus"]},
        {"tokenizer": tokenizer.scheme, "lowercase": tokenizer.lowercase,
         "k1": o["k1"], "b": o["b"], "docs": index.n_docs, "terms": len(index.postings)},
    )
    _say(f"indexed {index.n_docs} documents, {len(index.postings)} terms into {out}")
    return 0


def cmd_bm25_search(o: dict) -> int:
    index = load_bm25(o["index"])
    queries = read_corpus_jsonl(o["queries"])
    runs = [
        search_bm25(index, q.text, index.tokenizer, o["k"], query_id=q.id) for q in queries
    ]
    out = Path(o["out"])
    write_trec_run(out, runs, tag=o["run_tag"])
    _write_manifest(
        out,
        "bm25-search",
        {"index": o["index"], "queries": o["queries"]},
        {"k": o["k"], "run_tag": o["run_tag"]},
    )
    _say(f"searched {len(runs)} queries into {out}")
    return 0


def cmd_mine_dense(o: dict) -> int:
    runs = run_lists_from_trec(o["runs"])
    positives = _positives_from_qrels(load_qrels(o["positives"]))
    cfg = MiningConfig(
        retrieve_depth=o["retrieve_depth"],
        discard_top=o["discard_top"],
        sample_count_dense=o["samples"],
        seed=o["seed"],
    )
    negatives = mine_dense(runs.keys(), runs, positives, cfg)
    rows = [
        {
            "qid": qid,
            "positives": sorted(positives.get(qid, ())),
            "dense_negatives": negs,
            "seed": cfg.seed,
        }
        for qid, negs in negatives.items()
    ]
    out = Path(o["out"])
    write_negatives_jsonl(out, rows)
    _write_manifest(
        out,
        "mine-dense",
        {"runs": o["runs"], "positives": o["positives"]},
        {"retrieve_depth": cfg.retrieve_depth, "discard_top": cfg.discard_top,
         "samples": cfg.sample_count_dense, "seed": cfg.seed},
    )
    _say(f"mined dense negatives for {len(rows)} queries into {out}")
    return 0


def cmd_mine_bm25(o: dict) -> int:
    index = load_bm25(o["index"])
    queries = {q.id: q.text for q in read_corpus_jsonl(o["queries"])}
    positives = _positives_from_qrels(load_qrels(o["positives"]))
    cfg = MiningConfig(
        retrieve_depth=o["retrieve_depth"],
        discard_top=o["discard_top"],
        sample_count_bm25=o["samples"],
        seed=o["seed"],
    )
    negatives = mine_bm25(queries, index, positives, cfg)
    rows = [
        {
            "qid": qid,
            "positives": sorted(positives.get(qid, ())),
            "bm25_negatives": negs,
            "seed": cfg.seed,
        }
        for qid, negs in negatives.items()
    ]
    out = Path(o["out"])
    write_negatives_jsonl(out, rows)
    _write_manifest(
        out,
        "mine-bm25",
        {"index": o["index"], "queries": o["queries"], "positives": o["positives"]},
        {"retrieve_depth": cfg.retrieve_depth, "discard_top": cfg.discard_top,
         "samples": cfg.sample_count_bm25, "seed": cfg.seed},
    )
    _say(f"mined bm25 negatives for {len(rows)} queries into {out}")
    return 0


def _read_pairs_tsv(path: str | Path) -> list[tuple[str, str]]:
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) < 2:
                raise ConfigError(f"{path}:{lineno}: expected 'qid<TAB>did'")
            pairs.append((parts[0], parts[1]))
    return pairs


def cmd_transpose(o: dict) -> int:
    table = TeacherScoreTable.from_tsv(o["scores"])
    universe = _read_pairs_tsv(o["pairs"])
    kept, dropped = transpose_scores(table, universe)
    kept.write_tsv(o["out"])
    with open(o["dropped"], "w", encoding="utf-8") as fh:
        for qid, did in dropped:
            fh.write(f"{qid}\t{did}\n")
    _write_manifest(
        Path(o["out"]),
        "transpose",
        {"scores": o["scores"], "pairs": o["pairs"]},
        {"kept": len(kept), "dropped": len(dropped)},
    )
    _say(f"transposed {len(kept)} scores into {o['out']} ({len(dropped)} pairs dropped)")
    return 0


def cmd_nway(o: dict) -> int:
    table = TeacherScoreTable.from_tsv(o["scores"])
    keep_set: frozenset[str] = frozenset()
    if o["keep"]:
        keep_set = frozenset(
            line.strip() for line in Path(o["keep"]).read_text(encoding="utf-8").splitlines()
            if line.strip()
        )

    # merge candidate files: negatives lists concatenate in file order per query
    merged: dict[str, dict] = {}
    for path in o["candidates"]:
        for row in read_negatives_jsonl(path):
            entry = merged.setdefault(row["qid"], {"positives": [], "negatives": []})
            for pos in row.get("positives", []):
                if pos not in entry["positives"]:
                    entry["positives"].append(pos)
            for key in ("dense_negatives", "bm25_negatives", "negatives"):
                for neg in row.get(key) or []:
                    entry["negatives"].append(neg)

    examples = []
    skipped: list[tuple[str, str]] = []
    for qid, entry in merged.items():
        if not entry["positives"]:
            skipped.append((qid, "no positive"))
            continue
        positive = entry["positives"][0]
        pos_score = table.get(qid, positive)
        if pos_score is None:
            skipped.append((qid, f"no teacher score for positive {positive}"))
            continue
        known_positives = set(entry["positives"])
        candidates = []
        for did in entry["negatives"]:
            if did in known_positives:
                continue
            score = table.get(qid, did)
            if score is None:
                skipped.append((qid, f"no teacher score for candidate {did}"))
                continue
            candidates.append((did, score))
        try:
            examples.append(
                build_nway(
                    qid, positive, pos_score, candidates,
                    n=o["n"], keep_set=keep_set, seed=o["seed"],
                )
            )
        except (InsufficientCandidates, MissingTeacherScore) as exc:
            skipped.append((qid, str(exc)))
    out = Path(o["out"])
    write_nway_jsonl(out, examples)
    skipped_path = Path(o["skipped"]) if o["skipped"] else Path(str(out) + ".skipped.tsv")
    with open(skipped_path, "w", encoding="utf-8") as fh:
        for qid, reason in skipped:
            fh.write(f"{qid}\t{reason}\n")
    _write_manifest(
        out,
        "nway",
        {**{f"candidates{i}": p for i, p in enumerate(o["candidates"])},
         "scores": o["scores"], **({"keep": o["keep"]} if o["keep"] else {})},
        {"n": o["n"], "seed": o["seed"], "examples": len(examples),
         "skipped": len(skipped), "distillation": "KL(teacher || student)"},
    )
    if not examples:
        raise ConfigError("no n-way examples could be built (see skipped report)")
    _say(f"built {len(examples)} {o['n']}-way examples into {out} ({len(skipped)} skipped)")
    return 0


def cmd_eval(o: dict) -> int:
    specs = [MetricSpec.parse(m) for m in o["metric"]]
    report = evaluate(o["run"], o["qrels"], specs)
    for name, values in report["metrics"].items():
        print(f"{name}\tmean\t{values['mean']:.6f}")
    for warning in report["warnings"]:
        _say(f"warning: {warning}")
    if o["out"]:
        write_report(report, o["out"])
        _write_manifest(
            Path(o["out"]),
            "eval",
            {"run": o["run"], "qrels": o["qrels"]},
            {"metrics": [str(s) for s in specs]},
        )
        _say(f"wrote report to {o['out']}")
    return 0


# ----------------------------------------------------------------------
# command table and argument wiring
# ----------------------------------------------------------------------

COMMANDS: dict[str, tuple[list[Opt], Callable[[dict], int]]] = {
    "ingest": (
        [
            Opt("corpus", required=True, help="corpus JSONL with id/text per line"),
            Opt("embeddings", required=True, help="binary embedding file"),
            Opt("out", required=True, help="output store directory"),
            Opt("kind", choices=("doc", "query"), required=True, help="entry kind"),
        ],
        cmd_ingest,
    ),
    "index": (
        [
            Opt("store", required=True, help="ingested document store directory"),
            Opt("out", required=True, help="output index directory"),
            Opt("mode", choices=("exact", "compressed"), default="exact"),
            Opt("precision", choices=("float32", "float16"), default="float16",
                help="storage precision for exact mode"),
            Opt("k-centroids", default="auto", help="centroid count or 'auto'"),
            Opt("iterations", type=int, default=DEFAULT_ITERATIONS, help="k-means iterations"),
            Opt("seed", type=int, default=42),
        ],
        cmd_index,
    ),
    "search": (
        [
            Opt("index", required=True, help="index directory"),
            Opt("queries", required=True, help="query store directory"),
            Opt("k", type=int, default=10),
            Opt("out", required=True, help="output TREC run file"),
            Opt("mode", choices=("auto", "exact", "compressed"), default="auto"),
            Opt("nprobe", type=int, default=DEFAULT_NPROBE),
            Opt("candidate-cap", type=int, default=DEFAULT_CANDIDATE_CAP),
            Opt("run-tag", default="lateir"),
        ],
        cmd_search,
    ),
    "score": (
        [
            Opt("query-store", required=True),
            Opt("doc-store", required=True),
            Opt("pairs", required=True, help="TSV of qid<TAB>did pairs"),
            Opt("out", help="output TSV (default: stdout)"),
        ],
        cmd_score,
    ),
    "bm25-build": (
        [
            Opt("corpus", required=True),
            Opt("out", required=True),
            Opt("tokenizer", choices=("char-bigram", "char-unigram", "whitespace"),
                default="char-bigram"),
            Opt("k1", type=float, default=0.9),
            Opt("b", type=float, default=0.4),
            Opt("no-lowercase", flag=True, default=False),
        ],
        cmd_bm25_build,
    ),
    "bm25-search": (
        [
            Opt("index", required=True),
            Opt("queries", required=True, help="queries JSONL with id/text per line"),
            Opt("k", type=int, default=110),
            Opt("out", required=True),
            Opt("run-tag", default="bm25"),
        ],
        cmd_bm25_search,
    ),
    "mine-dense": (
        [
            Opt("runs", required=True, help="TREC run file at depth >= retrieve-depth"),
            Opt("positives", required=True, help="qrels file; grades > 0 are positives"),
            Opt("out", required=True, help="output negatives JSONL"),
            Opt("retrieve-depth", type=int, default=110),
            Opt("discard-top", type=int, default=10),
            Opt("samples", type=int, default=25),
            Opt("seed", type=int, default=42),
        ],
        cmd_mine_dense,
    ),
    "mine-bm25": (
        [
            Opt("index", required=True, help="bm25 index directory"),
            Opt("queries", required=True, help="queries JSONL"),
            Opt("positives", required=True),
            Opt("out", required=True),
            Opt("retrieve-depth", type=int, default=110),
            Opt("discard-top", type=int, default=10),
            Opt("samples", type=int, default=10),
            Opt("seed", type=int, default=42),
        ],
        cmd_mine_bm25,
    ),
    "transpose": (
        [
            Opt("scores", required=True, help="source teacher scores TSV"),
            Opt("pairs", required=True, help="pair universe TSV"),
            Opt("out", required=True),
            Opt("dropped", required=True, help="output TSV of pairs without scores"),
        ],
        cmd_transpose,
    ),
    "nway": (
        [
            Opt("candidates", required=True, multi=True,
                help="negatives JSONL (repeatable; lists merge per query)"),
            Opt("scores", required=True, help="teacher scores TSV"),
            Opt("out", required=True),
            Opt("n", type=int, default=DEFAULT_NWAY),
            Opt("keep", help="file of doc ids to keep ahead of random fill"),
            Opt("seed", type=int, default=42),
            Opt("skipped", help="skipped-queries report (default: <out>.skipped.tsv)"),
        ],
        cmd_nway,
    ),
    "eval": (
        [
            Opt("run", required=True),
            Opt("qrels", required=True),
            Opt("metric", required=True, multi=True, help="e.g. ndcg@10 (repeatable)"),
            Opt("out", help="write the JSON report here"),
        ],
        cmd_eval,
    ),
}

_GROUPED = {"bm25": ("build", "search"), "mine": ("dense", "bm25")}


def _add_command_parser(subparsers, name: str, command: str, opts: list[Opt]) -> None:
    parser = subparsers.add_parser(name, help=f"{command} stage")
    for opt in opts:
        flags = [f"--{opt.name}"]
        if opt.flag:
            parser.add_argument(*flags, dest=opt.dest, action="store_const", const=True,
                                default=None, help=opt.help)
        elif opt.multi:
            parser.add_argument(*flags, dest=opt.dest, action="append", type=opt.type,
                                default=None, help=opt.help)
        else:
            parser.add_argument(*flags, dest=opt.dest, type=opt.type, default=None,
                                choices=opt.choices, help=opt.help)
    parser.add_argument("--config", default=None, help="INI config file with per-stage sections")
    parser.set_defaults(_command=command)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lateir", description="late-interaction retrieval pipeline"
    )
    version = f"lateir {__version__} (formats: " + ", ".join(
        f"{k}={v}" for k, v in FORMAT_VERSIONS.items()
    ) + ")"
    parser.add_argument("--version", action="version", version=version)
    subparsers = parser.add_subparsers(dest="command", required=True)

    grouped_children = {f"{g}-{s}" for g, subs in _GROUPED.items() for s in subs}
    for command, (opts, _) in COMMANDS.items():
        if command not in grouped_children:
            _add_command_parser(subparsers, command, command, opts)
    for group, subs in _GROUPED.items():
        group_parser = subparsers.add_parser(group, help=f"{group} stages")
        group_sub = group_parser.add_subparsers(dest="subcommand", required=True)
        for sub in subs:
            command = f"{group}-{sub}"
            _add_command_parser(group_sub, sub, command, COMMANDS[command][0])

    pipeline = subparsers.add_parser("pipeline", help="run one stage from a config file")
    pipeline.add_argument("--config", required=True)
    pipeline.add_argument("--stage", required=True, choices=sorted(COMMANDS))
    pipeline.set_defaults(_command="pipeline")
    return parser


def run_pipeline(config: str | Path, stage: str, overrides: dict | None = None) -> int:
    """Execute one stage with options taken from the config file."""
    if stage not in COMMANDS:
        raise ConfigError(f"unknown stage {stage!r}")
    opts, handler = COMMANDS[stage]
    ns = argparse.Namespace(config=str(config), **{o.dest: None for o in opts})
    for key, value in (overrides or {}).items():
        setattr(ns, key, value)
    resolved = _resolve_options(stage, opts, ns)
    return handler(resolved)


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    try:
        if ns._command == "pipeline":
            return run_pipeline(ns.config, ns.stage)
        opts, handler = COMMANDS[ns._command]
        return handler(_resolve_options(ns._command, opts, ns))
    except EngineError as exc:
        _say(f"error: {exc}")
        return 2
    except (ValueError, OSError) as exc:
        _say(f"error: {exc}")
        return 2


if __name__ == "__main__":
    sys.exit(main())
