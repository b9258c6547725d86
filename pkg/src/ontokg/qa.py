"""Iterative multi-hop question answering grounded only in the KG, plus
alias-aware EM/F1 scoring."""

from __future__ import annotations

import json
import logging
import string
import unicodedata
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

from .errors import InvalidArgumentError, LlmError
from .llm import NOT_FINAL, Gateway, StageKind
from .llm.prompts import MUST_ANSWER
from .ontology import OntologySchema
from .store import KnowledgeGraph, Subgraph

logger = logging.getLogger(__name__)

MAX_STEPS = 5
UNKNOWN_TEXT = "unknown"


@dataclass
class QAStep:
    subquestion: str
    extracted_mentions: list[str] = field(default_factory=list)
    linked_entities: list[str] = field(default_factory=list)
    retrieved: Subgraph | None = None
    subanswer: str | None = None  # None is the unknown marker
    degraded: list[str] = field(default_factory=list)


@dataclass
class QATrace:
    question: str
    steps: list[QAStep] = field(default_factory=list)
    final_answer: str = ""
    forced: bool = False
    degraded: list[str] = field(default_factory=list)

    def as_record(self, kg: KnowledgeGraph | None = None) -> dict:
        def label(eid: str) -> str:
            return kg.label(eid) if kg is not None and eid in kg.entities else eid

        return {
            "question": self.question,
            "final_answer": self.final_answer,
            "forced": self.forced,
            "degraded": self.degraded,
            "steps": [
                {
                    "subquestion": s.subquestion,
                    "extracted_mentions": s.extracted_mentions,
                    "linked_entities": [label(e) for e in s.linked_entities],
                    "retrieved_entities": len(s.retrieved.entities) if s.retrieved else 0,
                    "retrieved_triplets": len(s.retrieved.triplets) if s.retrieved else 0,
                    "subanswer": s.subanswer,
                    "degraded": s.degraded,
                }
                for s in self.steps
            ],
        }


def linearize(subgraph: Subgraph, kg: KnowledgeGraph, schema: OntologySchema | None = None) -> str:
    """One fact per line: ``subject -- property -- object (qualifier: value)``."""
    lines = []
    for t in subgraph.triplets:
        prop = schema.property_label(t.property) if schema is not None else t.property
        line = f"{kg.label(t.subject_id)} -- {prop} -- {kg.label(t.object_id)}"
        for q in t.qualifiers:
            line += f" ({q.relation}: {q.object})"
        lines.append(line)
    return "\n".join(lines)


def render_history(history: list[QAStep]) -> str:
    if not history:
        return "(none yet)"
    return "\n".join(
        f"{s.subquestion} -> {s.subanswer if s.subanswer is not None else UNKNOWN_TEXT}"
        for s in history
    )


class QAEngine:
    def __init__(
        self,
        kg: KnowledgeGraph,
        gateway: Gateway,
        schema: OntologySchema | None = None,
        hop_k: int = 1,
        max_steps: int = MAX_STEPS,
        link_candidates: int = 10,
    ) -> None:
        if not 1 <= max_steps <= MAX_STEPS:
            raise InvalidArgumentError(f"max_steps must be in 1..{MAX_STEPS}")
        self.kg = kg
        self.gateway = gateway
        self.schema = schema
        self.hop_k = hop_k
        self.max_steps = max_steps
        self.link_candidates = link_candidates

    def extract_question_entities(self, question: str) -> tuple[list[str], bool]:
        """Mentions plus a degraded flag. Never returns an empty list."""
        if not question.strip():
            raise InvalidArgumentError("empty question")
        try:
            mentions, _ = self.gateway.complete(StageKind.qa_entity_extraction,
                                                {"question": question})
        except LlmError:
            return [question], True
        mentions = list(dict.fromkeys(mentions))
        return (mentions or [question]), False

    def _entity_line(self, eid: str) -> str:
        e = self.kg.entities[eid]
        if self.schema is not None and e.type_id in self.schema.types:
            return f"{e.canonical_label} ({self.schema.type_label(e.type_id)})"
        return e.canonical_label

    def link_question_entities(self, mentions: list[str], question: str = "") -> list[str]:
        """Selected entity ids, in candidate order."""
        if not self.kg.entities:
            return []
        per_mention = [self.kg.find_entities_by_alias(m, self.link_candidates) for m in mentions]
        candidates = list(dict.fromkeys(m.entity_id for ms in per_mention for m in ms))
        fallback = list(dict.fromkeys(ms[0].entity_id for ms in per_mention if ms))
        if not candidates:
            return []

        def validate(names: list[str]) -> list[str]:
            picked = []
            for name in names:
                low = name.lower()
                hits = [e for e in candidates if self.kg.label(e) == name
                        or self._entity_line(e) == name]
                if not hits:
                    hits = [e for e in candidates if self.kg.label(e).lower() == low]
                picked.extend(hits)
            return list(dict.fromkeys(picked))

        try:
            chosen, _ = self.gateway.complete(StageKind.qa_entity_linking, {
                "question": question or " ".join(mentions),
                "candidates": "\n".join(f"- {self._entity_line(e)}" for e in candidates),
            }, validate)
        except LlmError:
            chosen = []
        return chosen or fallback

    def answer_step(self, subquestion: str, subgraph: Subgraph) -> str | None:
        if not subgraph.triplets:
            return None
        try:
            answer, _ = self.gateway.complete(StageKind.qa_subanswer, {
                "question": subquestion,
                "facts": linearize(subgraph, self.kg, self.schema),
            })
        except LlmError:
            return None
        return None if normalize_answer(answer) == UNKNOWN_TEXT else answer

    def next_subquestion(self, question: str, history: list[QAStep]) -> str:
        if len(history) >= self.max_steps:
            raise InvalidArgumentError("step cap reached")
        sub, _ = self.gateway.complete(StageKind.qa_decompose, {
            "question": question, "history": render_history(history),
        })
        return sub

    def check_final(self, question: str, history: list[QAStep],
                    must_answer: bool = False) -> str | None:
        """Final answer text, or None when more hops are needed."""
        if not history:
            raise InvalidArgumentError("final check needs at least one answered step")
        reply, _ = self.gateway.complete(StageKind.qa_final_check, {
            "question": question,
            "history": render_history(history),
            "must_answer": MUST_ANSWER if must_answer else "",
        })
        return None if reply == NOT_FINAL else reply

    def answer(self, question: str) -> QATrace:
        trace = QATrace(question)
        final: str | None = None
        while len(trace.steps) < self.max_steps:
            try:
                sub = self.next_subquestion(question, trace.steps)
            except LlmError:
                trace.degraded.append(f"decompose-failed@{len(trace.steps) + 1}")
                break
            step = QAStep(sub)
            step.extracted_mentions, degraded = self.extract_question_entities(sub)
            if degraded:
                step.degraded.append("entity-extraction-fallback")
            step.linked_entities = self.link_question_entities(step.extracted_mentions, sub)
            step.retrieved = self.kg.neighborhood(step.linked_entities, self.hop_k)
            step.subanswer = self.answer_step(sub, step.retrieved)
            trace.steps.append(step)
            try:
                final = self.check_final(question, trace.steps)
            except LlmError:
                trace.degraded.append(f"final-check-failed@{len(trace.steps)}")
                final = None
            if final is not None:
                break
        if final is None:
            trace.forced = True
            if trace.steps:
                try:
                    final = self.check_final(question, trace.steps, must_answer=True)
                except LlmError:
                    final = None
            if final is None:
                trace.degraded.append("forced-final-fallback")
                known = [s.subanswer for s in trace.steps if s.subanswer is not None]
                final = known[-1] if known else ""
        trace.final_answer = final
        return trace


# --- scoring ----------------------------------------------------------------

def normalize_answer(text: str) -> str:
    """Lowercase, drop punctuation, collapse whitespace."""
    text = text.lower()
    text = "".join(
        ch for ch in text
        if ch not in string.punctuation and not unicodedata.category(ch).startswith("P")
    )
    return " ".join(text.split())


def token_f1(prediction: str, gold: str) -> float:
    pred = normalize_answer(prediction).split()
    ref = normalize_answer(gold).split()
    if not pred or not ref:
        return float(pred == ref)
    common = sum((Counter(pred) & Counter(ref)).values())
    if common == 0:
        return 0.0
    precision = common / len(pred)
    recall = common / len(ref)
    return 2 * precision * recall / (precision + recall)


def answer_variants(predicted: str, kg: KnowledgeGraph | None) -> set[str]:
    """The prediction plus every alias of any KG entity it names."""
    variants = {predicted}
    if kg is None:
        return variants
    norm = normalize_answer(predicted)
    if not norm:
        return variants
    for e in kg.entities.values():
        if any(normalize_answer(a) == norm for a in e.aliases):
            variants |= e.aliases
    return variants


@dataclass(frozen=True)
class Score:
    exact_match: int
    f1: float


def score(predicted: str, gold_answers: Iterable[str], kg: KnowledgeGraph | None = None) -> Score:
    golds = list(gold_answers)
    if not golds:
        raise InvalidArgumentError("gold answers must be non-empty")
    variants = answer_variants(predicted, kg)
    norm_golds = {normalize_answer(g) for g in golds}
    em = int(any(normalize_answer(v) in norm_golds for v in variants))
    f1 = max(token_f1(v, g) for v in variants for g in golds)
    return Score(em, f1)


@dataclass
class QARecord:
    qid: str
    question: str
    answers: list[str]
    question_entities: list[str] = field(default_factory=list)


def load_dataset(path: str | Path) -> list[QARecord]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                rec = json.loads(line)
                records.append(QARecord(
                    str(rec.get("id", len(records))), rec["question"], list(rec["answers"]),
                    list(rec.get("question_entities", [])),
                ))
    return records


@dataclass
class QAReport:
    n: int
    exact_match: float
    f1: float
    per_question: list[dict]

    def as_dict(self, per_question: bool = True) -> dict:
        out = {"n": self.n, "exact_match": self.exact_match, "f1": self.f1}
        if per_question:
            out["per_question"] = self.per_question
        return out


def evaluate(engine: QAEngine, records: Iterable[QARecord]) -> tuple[QAReport, list[QATrace]]:
    rows, traces = [], []
    for rec in records:
        trace = engine.answer(rec.question)
        s = score(trace.final_answer, rec.answers, engine.kg)
        traces.append(trace)
        rows.append({"id": rec.qid, "question": rec.question, "predicted": trace.final_answer,
                     "answers": rec.answers, "exact_match": s.exact_match, "f1": s.f1,
                     "steps": len(trace.steps), "degraded": bool(trace.degraded)})
    n = len(rows)
    em = 100.0 * sum(r["exact_match"] for r in rows) / n if n else 0.0
    f1 = 100.0 * sum(r["f1"] for r in rows) / n if n else 0.0
    return QAReport(n, em, f1, rows), traces
