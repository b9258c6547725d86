"""Command line interface.

Exit codes: 0 success, 1 usage error, 2 data error, 3 backend error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Sequence

from . import __version__
from .analytics import (
    STATS_DEFINITIONS,
    answer_coverage,
    compare_reports,
    graph_stats,
    neighborhood_profile,
)
from .embedding import CachedEmbedder, HashingEmbedder, HttpEmbedder
from .errors import FixtureMissError, LlmError, OntoKGError, SchemaError, SnapshotError
from .extraction import Pipeline, PipelineConfig, load_corpus
from .llm import Gateway, HttpChatBackend, ScriptedBackend, UsageReport
from .ontology import OntologySearch, compile_raw_dump, export_schema, load_schema
from .qa import QAEngine, evaluate, load_dataset
from .store import KnowledgeGraph

logger = logging.getLogger("ontokg")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_BACKEND = 0, 1, 2, 3


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    ontology: str = ""
    corpus: str = ""
    backend: str = ""
    llm_url: str = ""
    llm_model: str = ""
    embedder: str = "hashing"
    embed_url: str = ""
    embed_model: str = ""
    embed_dim: int = 256
    max_chunk_chars: int = 2000
    hop_k: int = 1
    retry_budget: int = 3
    out: str = "out"
    seed: int = 0
    jobs: int = 1
    temperature: float = 0.0
    stage_temperatures: dict[str, float] = field(default_factory=dict)

    PATH_KEYS = ("ontology", "corpus")

    @classmethod
    def keys(cls) -> list[str]:
        return [f.name for f in fields(cls) if f.name != "stage_temperatures"]

    def set(self, key: str, value: str) -> None:
        if key.startswith("temperature."):
            self.stage_temperatures[key.split(".", 1)[1]] = float(value)
            return
        if key not in self.keys():
            raise UsageError(f"unknown config key {key!r}")
        current = getattr(self, key)
        setattr(self, key, type(current)(value))

    def to_text(self) -> str:
        lines = [f"{k} = {getattr(self, k)}" for k in self.keys()]
        lines += [f"temperature.{s} = {t}" for s, t in sorted(self.stage_temperatures.items())]
        return "\n".join(lines) + "\n"

    def validate(self, need: Sequence[str]) -> None:
        for key in need:
            value = getattr(self, key)
            if not value:
                raise UsageError(f"missing required setting {key!r}")
            if key in self.PATH_KEYS and not Path(value).exists():
                raise UsageError(f"{key} path does not exist: {value}")
        if "backend" in need:
            if self.backend == "remote":
                if not (self.llm_url and self.llm_model):
                    raise UsageError("remote backend needs llm_url and llm_model")
            elif self.backend.startswith("scripted:"):
                if not Path(self.backend.split(":", 1)[1]).exists():
                    raise UsageError(f"fixture file missing: {self.backend}")
            else:
                raise UsageError("backend must be 'remote' or 'scripted:<fixture path>'")
        if self.embedder not in ("hashing", "remote"):
            raise UsageError("embedder must be 'hashing' or 'remote'")
        if self.embedder == "remote" and not (self.embed_url and self.embed_model):
            raise UsageError("remote embedder needs embed_url and embed_model")


def read_config(path: Path) -> RunConfig:
    cfg = RunConfig()
    base = path.parent
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key in RunConfig.PATH_KEYS and value and not Path(value).is_absolute():
            value = str(base / value)
        if key == "backend" and value.startswith("scripted:"):
            fixture = value.split(":", 1)[1]
            if not Path(fixture).is_absolute():
                value = "scripted:" + str(base / fixture)
        cfg.set(key, value)
    return cfg


def resolve_config(args: argparse.Namespace) -> RunConfig:
    cfg = read_config(Path(args.config)) if getattr(args, "config", None) else RunConfig()
    for key in RunConfig.keys():
        value = getattr(args, key, None)
        if value is not None:
            cfg.set(key, str(value))
    # absolute paths keep the saved run.cfg valid from any directory
    for key in RunConfig.PATH_KEYS:
        if getattr(cfg, key):
            setattr(cfg, key, str(Path(getattr(cfg, key)).resolve()))
    if cfg.backend.startswith("scripted:"):
        cfg.backend = "scripted:" + str(Path(cfg.backend.split(":", 1)[1]).resolve())
    return cfg


def make_embedder(cfg: RunConfig, out: Path | None = None):
    if cfg.embedder == "remote":
        inner = HttpEmbedder(cfg.embed_url, cfg.embed_model, cfg.embed_dim)
        return CachedEmbedder(inner, out / "embed_cache.jsonl" if out else None)
    return HashingEmbedder(cfg.embed_dim)


def make_gateway(cfg: RunConfig, log_sink=None, run_id: str = "run") -> Gateway:
    if cfg.backend == "remote":
        backend = HttpChatBackend(cfg.llm_url, cfg.llm_model)
    else:
        backend = ScriptedBackend.from_file(cfg.backend.split(":", 1)[1])
    from .llm import StageKind

    temps = {StageKind(k): v for k, v in cfg.stage_temperatures.items()}
    return Gateway(backend, retry_budget=cfg.retry_budget, temperature=cfg.temperature,
                   stage_temperatures=temps, max_in_flight=max(1, cfg.jobs),
                   log_sink=log_sink, run_id=run_id)


def update_manifest(out: Path, command: str, entry: dict) -> None:
    path = out / "manifest.json"
    manifest = json.loads(path.read_text(encoding="utf-8")) if path.exists() else {}
    manifest.setdefault("ontokg_version", __version__)
    manifest.setdefault("commands", {})[command] = entry
    files = sorted(p.name for p in out.iterdir() if p.is_file() and p.name != "manifest.json")
    manifest["files"] = files
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _load_schema(path: str):
    with open(path, "rb") as fh:
        return load_schema(fh)


# --- commands -------------------------------------------------------------------

def cmd_compile_ontology(args: argparse.Namespace) -> int:
    with open(args.raw, "rb") as fh:
        schema, report = compile_raw_dump(fh)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8") as fh:
        export_schema(schema, fh)
    text = json.dumps(report.as_dict(), sort_keys=True)
    if args.report:
        Path(args.report).write_text(text + "\n", encoding="utf-8")
    print(text)
    return EXIT_OK


def cmd_build(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    cfg.validate(["ontology", "corpus", "backend"])
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    schema = _load_schema(cfg.ontology)
    embedder = make_embedder(cfg, out)
    docs = load_corpus(cfg.corpus)
    kg = KnowledgeGraph(embedder)
    with open(out / "exchanges.jsonl", "w", encoding="utf-8") as log:
        gateway = make_gateway(cfg, log_sink=log, run_id="build")
        pipeline = Pipeline(schema, OntologySearch(schema, embedder), kg, gateway,
                            PipelineConfig(max_chunk_chars=cfg.max_chunk_chars, jobs=cfg.jobs))
        reports = pipeline.process_corpus(docs)
    kg.save(out / "kg.jsonl")
    if isinstance(embedder, CachedEmbedder):
        embedder.save()
    with open(out / "ingest_reports.jsonl", "w", encoding="utf-8") as fh:
        for r in reports:
            fh.write(json.dumps(r.as_record(), sort_keys=True) + "\n")
    usage = gateway.usage_report("build")
    (out / "usage.json").write_text(json.dumps(usage.as_dict(), indent=2) + "\n", encoding="utf-8")
    (out / "run.cfg").write_text(cfg.to_text(), encoding="utf-8")
    update_manifest(out, "build", {
        "documents": [d.doc_id for d in docs],
        "chunking": {"max_chunk_chars": cfg.max_chunk_chars, "unit": "paragraph"},
        "llm_backend": gateway.backend.backend_id,
        "embedder": embedder.backend_id,
        "usage": usage.total.as_dict(),
        "config": "run.cfg",
    })
    stored = sum(r.stored for r in reports)
    print(f"documents={len(docs)} candidates={sum(r.candidates for r in reports)} "
          f"stored={stored} entities={len(kg.entities)} triplets={len(kg.triplets)} "
          f"completion_tokens={usage.total.completion_tokens}")
    return EXIT_OK


def cmd_qa(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    cfg.validate(["backend"])
    kg_path = Path(args.kg) if args.kg else Path(cfg.out) / "kg.jsonl"
    if not kg_path.exists():
        raise UsageError(f"knowledge graph snapshot not found: {kg_path}")
    if not Path(args.dataset).exists():
        raise UsageError(f"dataset not found: {args.dataset}")
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    embedder = make_embedder(cfg, out)
    kg = KnowledgeGraph.load(kg_path, embedder)
    schema = _load_schema(cfg.ontology) if cfg.ontology else None
    records = load_dataset(args.dataset)
    with open(out / "qa_exchanges.jsonl", "w", encoding="utf-8") as log:
        gateway = make_gateway(cfg, log_sink=log, run_id="qa")
        engine = QAEngine(kg, gateway, schema, hop_k=cfg.hop_k)
        report, traces = evaluate(engine, records)
    with open(out / "traces.jsonl", "w", encoding="utf-8") as fh:
        for rec, trace in zip(records, traces):
            fh.write(json.dumps({"id": rec.qid, **trace.as_record(kg)}, ensure_ascii=False) + "\n")
    (out / "qa_report.json").write_text(
        json.dumps(report.as_dict(), indent=2, ensure_ascii=False) + "\n", encoding="utf-8")
    (out / "qa_usage.json").write_text(
        json.dumps(gateway.usage_report("qa").as_dict(), indent=2) + "\n", encoding="utf-8")
    update_manifest(out, "qa", {"dataset": str(args.dataset), "kg": str(kg_path),
                                "hop_k": cfg.hop_k, "llm_backend": gateway.backend.backend_id})
    print(f"questions={report.n} EM={report.exact_match:.1f} F1={report.f1:.1f}")
    if args.per_question:
        for row in report.per_question:
            print(f"{row['id']}\tEM={row['exact_match']}\tF1={row['f1']:.3f}\t"
                  f"steps={row['steps']}\tdegraded={int(row['degraded'])}\t{row['predicted']}")
    return EXIT_OK


def _names(args, paths) -> list[str]:
    if args.names:
        names = args.names.split(",")
        if len(names) != len(paths):
            raise UsageError("--names must list one name per snapshot")
        return names
    return [Path(p).stem for p in paths]


def _emit(table, args, out_name: str) -> None:
    rendered = {"text": table.to_text, "tsv": table.to_tsv, "json": table.to_json}[args.format]()
    sys.stdout.write(rendered)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"{out_name}.tsv").write_text(table.to_tsv(), encoding="utf-8")
        (out / f"{out_name}.txt").write_text(table.to_text(), encoding="utf-8")
        (out / f"{out_name}.json").write_text(table.to_json(), encoding="utf-8")
        update_manifest(out, out_name, {"snapshots": list(args.snapshots),
                                        "definitions": STATS_DEFINITIONS})


def _load_kg(path: str) -> KnowledgeGraph:
    if not Path(path).exists():
        raise UsageError(f"snapshot not found: {path}")
    return KnowledgeGraph.load(path)


def cmd_stats(args: argparse.Namespace) -> int:
    names = _names(args, args.snapshots)
    rows = [(n, graph_stats(_load_kg(p))) for n, p in zip(names, args.snapshots)]
    _emit(compare_reports(rows), args, "stats")
    return EXIT_OK


def cmd_coverage(args: argparse.Namespace) -> int:
    names = _names(args, args.snapshots)
    schema = _load_schema(args.ontology) if args.ontology else None
    if not Path(args.dataset).exists():
        raise UsageError(f"dataset not found: {args.dataset}")
    records = load_dataset(args.dataset)
    hops = [int(h) for h in args.hops.split(",") if h.strip()]
    rows = []
    details = []
    for name, path in zip(names, args.snapshots):
        kg = _load_kg(path)
        cov = answer_coverage(kg, records, hops, schema, bootstrap=args.bootstrap, seed=args.seed)
        parts = [cov]
        if args.profile_k:
            seeds = [s for r in records for s in r.question_entities]
            parts.append(neighborhood_profile(kg, seeds, args.profile_k))
        rows.append((name, parts))
        details.append({"name": name, **cov.as_dict(per_question=args.per_question)})
    _emit(compare_reports(rows), args, "coverage")
    if args.out:
        Path(args.out, "coverage_detail.json").write_text(
            json.dumps(details, indent=2) + "\n", encoding="utf-8")
    return EXIT_OK


def cmd_usage(args: argparse.Namespace) -> int:
    path = Path(args.log)
    if path.is_dir():
        path = path / "exchanges.jsonl"
    if not path.exists():
        raise UsageError(f"exchange log not found: {path}")
    with open(path, encoding="utf-8") as fh:
        report = UsageReport.from_records(json.loads(line) for line in fh if line.strip())
    print(json.dumps(report.as_dict(), indent=2))
    return EXIT_OK


# --- parser --------------------------------------------------------------------

def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value configuration file")
    for key in RunConfig.keys():
        p.add_argument(f"--{key.replace('_', '-')}", dest=key, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ontokg", description="Ontology-aligned KG construction and KG-grounded QA.")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("compile-ontology", help="compile a raw dump into a schema file")
    p.add_argument("raw")
    p.add_argument("out")
    p.add_argument("--report")
    p.set_defaults(func=cmd_compile_ontology)

    p = sub.add_parser("build", help="construct a KG from a corpus")
    _add_run_flags(p)
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("qa", help="answer a QA dataset from a KG snapshot")
    _add_run_flags(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--kg")
    p.add_argument("--per-question", action="store_true")
    p.set_defaults(func=cmd_qa)

    for name, func in (("stats", cmd_stats), ("coverage", cmd_coverage)):
        p = sub.add_parser(name, help=f"{name} report over KG snapshots")
        p.add_argument("snapshots", nargs="+")
        p.add_argument("--names")
        p.add_argument("--format", choices=("text", "tsv", "json"), default="text")
        p.add_argument("--out")
        if name == "coverage":
            p.add_argument("--dataset", required=True)
            p.add_argument("--ontology")
            p.add_argument("--hops", default="5,10")
            p.add_argument("--profile-k", type=int, default=0)
            p.add_argument("--bootstrap", type=int, default=1000)
            p.add_argument("--seed", type=int, default=0)
            p.add_argument("--per-question", action="store_true")
        p.set_defaults(func=func)

    p = sub.add_parser("usage", help="token usage from an exchange log or run directory")
    p.add_argument("log")
    p.set_defaults(func=cmd_usage)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FixtureMissError, LlmError) as exc:
        print(f"backend error: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except (SchemaError, SnapshotError, OntoKGError, ValueError, KeyError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
