"""Three-stage KG construction: candidate extraction, ontology-aware
refinement, alias-aware entity normalization, then final verification."""

from __future__ import annotations

import json
import logging
import re
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

from .errors import LlmError, MalformedOutputError, OntoKGError
from .llm import Gateway, LlmUsage, StageKind
from .llm.prompts import NO_MATCH
from .ontology import (
    FORWARD,
    INVERSE,
    OntologySchema,
    OntologySearch,
    PropertyRecord,
    allowed_relations,
    check_alignment,
)
from .store import KGTriplet, KnowledgeGraph, Provenance, Qualifier

logger = logging.getLogger(__name__)

OFF_CANDIDATE = "off-candidate"


class NoCandidatesError(OntoKGError):
    pass


@dataclass(frozen=True)
class Document:
    doc_id: str
    text: str


@dataclass(frozen=True)
class CandidateTriplet:
    subject: str
    relation: str
    object: str
    subject_type: str
    object_type: str
    qualifiers: tuple[Qualifier, ...]
    source: Provenance
    context: str = ""

    def display(self) -> str:
        return f"({self.subject}, {self.relation}, {self.object})"


@dataclass(frozen=True)
class RefinedTriplet:
    subject: str
    subject_type_id: str
    relation_property: str
    orientation: str
    object: str
    object_type_id: str
    qualifiers: tuple[Qualifier, ...]
    aligned: bool
    source: Provenance
    is_property: bool = False
    context: str = ""


@dataclass(frozen=True)
class NormalizedTriplet:
    subject_id: str
    relation_property: str
    object_id: str
    qualifiers: tuple[Qualifier, ...]
    is_property: bool
    source: Provenance


@dataclass
class IngestReport:
    doc_id: str
    chunks: int = 0
    failed_chunks: int = 0
    candidates: int = 0
    refined: int = 0
    stored: int = 0
    deduplicated: int = 0
    aligned: int = 0
    new_entities: int = 0
    dropped: dict[str, int] = field(default_factory=dict)
    degraded: dict[str, int] = field(default_factory=dict)
    usage: LlmUsage = field(default_factory=LlmUsage)

    @property
    def dropped_total(self) -> int:
        return sum(self.dropped.values())

    def drop(self, reason: str) -> None:
        self.dropped[reason] = self.dropped.get(reason, 0) + 1

    def degrade(self, reason: str) -> None:
        self.degraded[reason] = self.degraded.get(reason, 0) + 1

    def as_record(self) -> dict:
        return {
            "doc_id": self.doc_id, "chunks": self.chunks, "failed_chunks": self.failed_chunks,
            "candidates": self.candidates, "refined": self.refined, "stored": self.stored,
            "deduplicated": self.deduplicated, "aligned": self.aligned,
            "new_entities": self.new_entities, "dropped": dict(sorted(self.dropped.items())),
            "degraded": dict(sorted(self.degraded.items())), "usage": self.usage.as_dict(),
        }


@dataclass
class PipelineConfig:
    type_candidates: int = 10
    relation_candidates: int = 10
    link_candidates: int = 10
    link_fallback_unfiltered: bool = True
    max_chunk_chars: int = 2000
    jobs: int = 1


_PARA = re.compile(r"\n\s*\n")
_SENTENCE_END = re.compile(r"[.!?]\s+")


def chunk_document(text: str, max_chars: int = 2000) -> list[tuple[int, int]]:
    """Paragraph spans, long paragraphs split at sentence ends or spaces."""
    spans: list[tuple[int, int]] = []
    pos = 0
    for m in list(_PARA.finditer(text)) + [None]:
        end = m.start() if m else len(text)
        _split_span(text, pos, end, max_chars, spans)
        if m:
            pos = m.end()
    return spans


def _split_span(text: str, start: int, end: int, max_chars: int, out: list) -> None:
    # trim surrounding whitespace so spans point at content
    while start < end and text[start].isspace():
        start += 1
    while end > start and text[end - 1].isspace():
        end -= 1
    while end - start > max_chars:
        window = text[start : start + max_chars]
        cut = None
        for m in _SENTENCE_END.finditer(window):
            cut = m.end()
        if cut is None:
            space = window.rfind(" ")
            cut = space + 1 if space > 0 else max_chars
        _split_span(text, start, start + cut, max_chars, out)
        start += cut
        while start < end and text[start].isspace():
            start += 1
    if end > start:
        out.append((start, end))


def _bullet(lines: Iterable[str]) -> str:
    rendered = "\n".join(f"- {line}" for line in lines)
    return rendered or "(none)"


class _Tally:
    def __init__(self) -> None:
        self.usage = LlmUsage()
        self._lock = threading.Lock()

    def add(self, usage: LlmUsage | None) -> None:
        if usage is not None:
            with self._lock:
                self.usage = self.usage + usage


class Pipeline:
    def __init__(
        self,
        schema: OntologySchema,
        search: OntologySearch,
        kg: KnowledgeGraph,
        gateway: Gateway,
        config: PipelineConfig | None = None,
    ) -> None:
        self.schema = schema
        self.search = search
        self.kg = kg
        self.gateway = gateway
        self.config = config or PipelineConfig()
        self._tally = _Tally()

    def _call(self, stage: StageKind, variables: dict, validate=None):
        try:
            parsed, usage = self.gateway.complete(stage, variables, validate)
        except MalformedOutputError as exc:
            self._tally.add(exc.usage)
            raise
        self._tally.add(usage)
        return parsed

    # --- stage 1 --------------------------------------------------------------

    def extract_candidates(self, text: str, doc_id: str = "", start: int = 0,
                           end: int | None = None) -> list[CandidateTriplet]:
        if not text.strip():
            raise ValueError("empty chunk")
        end = start + len(text) if end is None else end
        source = Provenance(doc_id, start, end)
        rows = self._call(StageKind.candidate_extraction, {"text": text})
        return [
            CandidateTriplet(
                r["subject"], r["relation"], r["object"], r["subject_type"], r["object_type"],
                tuple(Qualifier(q["relation"], q["object"]) for q in r["qualifiers"]),
                source, text,
            )
            for r in rows
        ]

    # --- stage 2 --------------------------------------------------------------

    def _type_line(self, type_id: str) -> str:
        return f"{self.schema.types[type_id].label} [{type_id}]"

    def _resolve_type(self, answer: str, candidates: list[str]) -> str:
        if answer in candidates:
            return answer
        for tid in candidates:
            if answer == self._type_line(tid):
                return tid
        low = answer.strip().lower()
        for tid in candidates:
            if self.schema.types[tid].label.lower() == low:
                return tid
        raise ValueError(f"{OFF_CANDIDATE}: type {answer!r} not among candidates")

    def refine_types(self, c: CandidateTriplet) -> tuple[str, str]:
        k = self.config.type_candidates
        if not self.schema.types:
            raise NoCandidatesError("ontology has no types")
        s_cands = [tid for tid, _ in self.search.search_types(c.subject_type, k)]
        o_cands = [tid for tid, _ in self.search.search_types(c.object_type, k)]
        if not s_cands or not o_cands:
            raise NoCandidatesError("no candidate types")

        def validate(parsed: dict) -> tuple[str, str]:
            return (self._resolve_type(parsed["subject_type"], s_cands),
                    self._resolve_type(parsed["object_type"], o_cands))

        return self._call(StageKind.type_selection, {
            "text": c.context,
            "triplet": c.display(),
            "subject_type": c.subject_type,
            "object_type": c.object_type,
            "subject_candidates": _bullet(self._type_line(t) for t in s_cands),
            "object_candidates": _bullet(self._type_line(t) for t in o_cands),
        }, validate)

    def rank_relations(
        self, relation: str, options: list[tuple[PropertyRecord, str]]
    ) -> list[tuple[PropertyRecord, str, float]]:
        """Order options by best-alias cosine to the extracted relation."""
        q = self.search.relations.embedder.embed(relation)
        best: dict[str, float] = {}
        for hit in self.search.relations.top_k_vector(q, None):
            best.setdefault(hit.key, hit.score)
        scored = [(p, o, best.get(p.property_id, -1.0)) for p, o in options]
        scored.sort(key=lambda x: (-x[2], x[0].property_id, x[1] != FORWARD))
        return scored

    def refine_backbone(self, c: CandidateTriplet, s_type: str, o_type: str) -> RefinedTriplet:
        def keep_surface() -> RefinedTriplet:
            return RefinedTriplet(c.subject, s_type, c.relation, FORWARD, c.object, o_type,
                                  c.qualifiers, False, c.source, False, c.context)

        options = allowed_relations(self.schema, s_type, o_type)
        if not options:
            return keep_surface()
        ranked = self.rank_relations(c.relation, options)[: self.config.relation_candidates]

        def line(p: PropertyRecord, orientation: str) -> str:
            s, o = (c.subject, c.object) if orientation == FORWARD else (c.object, c.subject)
            return f"{p.label} [{p.property_id}] ({orientation}): ({s}, {p.label}, {o})"

        def validate(parsed: dict) -> tuple[PropertyRecord, str]:
            answer = parsed["relation"].strip()
            low = answer.lower()
            matches = [
                (p, o) for p, o, _ in ranked
                if answer in (p.property_id, f"{p.label} [{p.property_id}]")
                or p.label.lower() == low
            ]
            if "orientation" in parsed:
                matches = [(p, o) for p, o in matches if o == parsed["orientation"]]
            if not matches:
                raise ValueError(f"{OFF_CANDIDATE}: relation {answer!r} not among candidates")
            return matches[0]

        try:
            prop, orientation = self._call(StageKind.relation_selection, {
                "text": c.context,
                "triplet": c.display(),
                "candidates": _bullet(line(p, o) for p, o, _ in ranked),
            }, validate)
        except LlmError as exc:
            logger.info("relation selection failed for %s: %s", c.display(), exc)
            return keep_surface()
        subj, obj, st, ot = c.subject, c.object, s_type, o_type
        if orientation == INVERSE:
            subj, obj, st, ot = obj, subj, ot, st
        aligned = check_alignment(self.schema, st, prop.property_id, ot).aligned
        return RefinedTriplet(subj, st, prop.property_id, FORWARD, obj, ot, c.qualifiers,
                              aligned, c.source, True, c.context)

    # --- stage 3 --------------------------------------------------------------

    def _link_tags(self, type_id: str) -> frozenset[str]:
        if type_id in self.schema.ancestor_closure:
            return self.schema.ancestor_closure[type_id]
        return frozenset({type_id})

    def link_mention(self, mention: str, type_id: str, role: str, t: RefinedTriplet,
                     report: IngestReport | None = None) -> str:
        """Entity id for the mention: an existing entity or a new one."""
        k = self.config.link_candidates
        matches = self.kg.find_entities_by_alias(mention, k, self._link_tags(type_id))
        if not matches and self.config.link_fallback_unfiltered:
            matches = self.kg.find_entities_by_alias(mention, k)
        chosen: str | None = None
        if matches:
            cands = [self.kg.entities[m.entity_id] for m in matches]

            def validate(answer: str) -> str:
                if answer.strip().strip('"').lower() == NO_MATCH.lower():
                    return ""
                for e in cands:
                    if answer == e.canonical_label:
                        return e.entity_id
                for e in cands:
                    if answer.lower() == e.canonical_label.lower():
                        return e.entity_id
                raise ValueError(f"{OFF_CANDIDATE}: entity {answer!r} not among candidates")

            triplet = f"({t.subject}, {self.schema.property_label(t.relation_property)}, {t.object})"
            try:
                chosen = self._call(StageKind.entity_linking, {
                    "text": t.context,
                    "triplet": triplet,
                    "role": role,
                    "role_title": role.capitalize(),
                    "mention": mention,
                    "candidates": _bullet(
                        f"{e.canonical_label} ({self.schema.type_label(e.type_id)})"
                        for e in cands),
                }, validate) or None
            except LlmError as exc:
                logger.info("entity linking failed for %r: %s", mention, exc)
                if report is not None:
                    report.degrade("link-failed")
        if chosen:
            self.kg.add_alias(chosen, mention)
            return chosen
        return self.kg.insert_entity(mention, type_id)

    def normalize_entities(self, t: RefinedTriplet,
                           report: IngestReport | None = None) -> NormalizedTriplet:
        subject_id = self.link_mention(t.subject, t.subject_type_id, "subject", t, report)
        object_id = self.link_mention(t.object, t.object_type_id, "object", t, report)
        return NormalizedTriplet(subject_id, t.relation_property, object_id, t.qualifiers,
                                 t.is_property, t.source)

    # --- verification ---------------------------------------------------------

    def verify(self, n: NormalizedTriplet) -> tuple[KGTriplet, str]:
        """Recompute alignment on the stored entity types and store regardless."""
        aligned = False
        if n.is_property:
            s_type = self.kg.entities[n.subject_id].type_id
            o_type = self.kg.entities[n.object_id].type_id
            aligned = check_alignment(self.schema, s_type, n.relation_property, o_type).aligned
        triplet = KGTriplet(n.subject_id, n.relation_property, n.object_id, n.qualifiers,
                            aligned, [n.source])
        return triplet, self.kg.insert_triplet(triplet)

    # --- composition ----------------------------------------------------------

    def _stage_one(self, doc: Document, span: tuple[int, int]):
        start, end = span
        try:
            return self.extract_candidates(doc.text[start:end], doc.doc_id, start, end)
        except LlmError as exc:
            logger.warning("%s[%d:%d]: candidate extraction failed: %s",
                           doc.doc_id, start, end, exc)
            return None

    def process_candidate(self, c: CandidateTriplet, report: IngestReport) -> None:
        report.candidates += 1
        try:
            s_type, o_type = self.refine_types(c)
        except NoCandidatesError:
            report.drop("no-type-candidates")
            return
        except MalformedOutputError as exc:
            off = (exc.last_error or "").startswith(OFF_CANDIDATE)
            report.drop(OFF_CANDIDATE if off else "type-selection-failed")
            return
        except LlmError:
            report.drop("type-selection-failed")
            return
        report.refined += 1
        refined = self.refine_backbone(c, s_type, o_type)
        normalized = self.normalize_entities(refined, report)
        stored, outcome = self.verify(normalized)
        report.stored += 1
        if outcome == "deduplicated":
            report.deduplicated += 1
        if stored.aligned:
            report.aligned += 1

    def process_document(self, doc: Document) -> IngestReport:
        report = IngestReport(doc.doc_id)
        self._tally = _Tally()
        entities_before = len(self.kg.entities)
        spans = chunk_document(doc.text, self.config.max_chunk_chars)
        report.chunks = len(spans)
        if self.config.jobs > 1 and len(spans) > 1:
            with ThreadPoolExecutor(self.config.jobs) as pool:
                results = list(pool.map(lambda s: self._stage_one(doc, s), spans))
        else:
            results = [self._stage_one(doc, s) for s in spans]
        # stages 2-3 mutate the alias index: strictly sequential, document order
        for cands in results:
            if cands is None:
                report.failed_chunks += 1
                continue
            for c in cands:
                self.process_candidate(c, report)
        report.new_entities = len(self.kg.entities) - entities_before
        report.usage = self._tally.usage
        return report

    def process_corpus(self, docs: Iterable[Document]) -> list[IngestReport]:
        return [self.process_document(d) for d in docs]


def load_corpus(path: str | Path) -> list[Document]:
    """A directory of ``.txt`` files (sorted by name) or a JSON Lines file of
    ``{"id", "text"}`` records."""
    path = Path(path)
    if path.is_dir():
        return [Document(p.stem, p.read_text(encoding="utf-8"))
                for p in sorted(path.glob("*.txt"))]
    docs = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                rec = json.loads(line)
                docs.append(Document(str(rec["id"]), rec["text"]))
    return docs


__all__ = [
    "CandidateTriplet", "Document", "IngestReport", "NoCandidatesError",
    "NormalizedTriplet", "Pipeline", "PipelineConfig", "RefinedTriplet",
    "chunk_document", "load_corpus",
]
