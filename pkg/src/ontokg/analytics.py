"""Graph quality metrics: structural statistics, answer coverage, ontology
entailment and neighborhood-size profiles, with tabular comparison."""

from __future__ import annotations

import json
from collections import deque
from dataclasses import asdict, dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .ontology import OntologySchema, check_alignment
from .qa import QARecord, normalize_answer
from .store import KGTriplet, KnowledgeGraph

STATS_DEFINITIONS = {
    "num_entities": "number of stored entities",
    "num_relations": "distinct property ids / surface relations over all triplets",
    "avg_entity_degree": "2 * |triplets| / |entities| (multigraph degree)",
    "unique_entities_per_relation": "mean over relations of the number of distinct "
                                    "entities incident to a triplet with that relation",
    "relation_diversity_per_pair": "mean over unordered entity pairs joined by >= 1 triplet "
                                   "of the number of distinct relations between them",
}


@dataclass(frozen=True)
class GraphStats:
    num_entities: int
    num_relations: int
    avg_entity_degree: float
    unique_entities_per_relation: float
    relation_diversity_per_pair: float

    def as_row(self) -> dict[str, float]:
        return asdict(self)


def graph_stats(kg: KnowledgeGraph) -> GraphStats:
    n_ent = len(kg.entities)
    if n_ent == 0:
        return GraphStats(0, 0, 0.0, 0.0, 0.0)
    incident: dict[str, set[str]] = {}
    pair_relations: dict[tuple[str, str], set[str]] = {}
    for t in kg.triplets:
        incident.setdefault(t.property, set()).update((t.subject_id, t.object_id))
        pair = tuple(sorted((t.subject_id, t.object_id)))
        pair_relations.setdefault(pair, set()).add(t.property)
    n_rel = len(incident)
    return GraphStats(
        num_entities=n_ent,
        num_relations=n_rel,
        avg_entity_degree=2 * len(kg.triplets) / n_ent,
        unique_entities_per_relation=(
            sum(len(s) for s in incident.values()) / n_rel if n_rel else 0.0),
        relation_diversity_per_pair=(
            sum(len(s) for s in pair_relations.values()) / len(pair_relations)
            if pair_relations else 0.0),
    )


# --- surface matching ---------------------------------------------------------

def surfaces_match(a: str, b: str, min_len: int = 3) -> bool:
    """Bidirectional substring test on normalized strings.

    A containment only counts when the shorter string has at least
    ``min_len`` characters; equal strings always match.
    """
    if not a or not b:
        return False
    if a == b:
        return True
    short, long_ = (a, b) if len(a) <= len(b) else (b, a)
    return len(short) >= min_len and short in long_


class SurfaceMatcher:
    def __init__(self, kg: KnowledgeGraph, min_len: int = 3) -> None:
        self.min_len = min_len
        self._names = [
            (e.entity_id, sorted({normalize_answer(a) for a in e.aliases}))
            for e in kg.entities.values()
        ]

    def entities(self, surface: str) -> set[str]:
        norm = normalize_answer(surface)
        return {eid for eid, names in self._names
                if any(surfaces_match(norm, n, self.min_len) for n in names)}


def hop_distances(kg: KnowledgeGraph, seeds: Iterable[str], limit: int | None = None) -> dict[str, int]:
    dist = {s: 0 for s in seeds if s in kg.entities}
    queue = deque(sorted(dist))
    while queue:
        v = queue.popleft()
        if limit is not None and dist[v] >= limit:
            continue
        for w in kg.neighbors(v):
            if w not in dist:
                dist[w] = dist[v] + 1
                queue.append(w)
    return dist


# --- coverage -----------------------------------------------------------------

@dataclass
class CoverageReport:
    n_questions: int
    contains_answer_total: float
    contains_answer_khop: dict[int, float]
    ontology_entailment: float | None = None
    per_question: list[dict] = field(default_factory=list)
    bootstrap_std: dict[str, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        ks = sorted(self.contains_answer_khop)
        values = [self.contains_answer_khop[k] for k in ks]
        for v in values + [self.contains_answer_total]:
            assert 0.0 <= v <= 100.0, "coverage percentage out of range"
        assert all(a <= b for a, b in zip(values, values[1:])), "k-hop coverage must be monotone"
        assert all(v <= self.contains_answer_total for v in values), "k-hop exceeds total"

    def as_row(self) -> dict[str, float | None]:
        row: dict[str, float | None] = {"contains_answer_total": self.contains_answer_total}
        for k in sorted(self.contains_answer_khop):
            row[f"contains_answer_{k}hop"] = self.contains_answer_khop[k]
        if self.ontology_entailment is not None:
            row["ontology_entailment"] = self.ontology_entailment
        return row

    def as_dict(self, per_question: bool = False) -> dict:
        out = {
            "n_questions": self.n_questions,
            "contains_answer_total": self.contains_answer_total,
            "contains_answer_khop": {str(k): v for k, v in sorted(self.contains_answer_khop.items())},
            "ontology_entailment": self.ontology_entailment,
            "bootstrap_std": self.bootstrap_std,
        }
        if per_question:
            out["per_question"] = self.per_question
        return out


def _bootstrap_std(hits: np.ndarray, resamples: int, rng: np.random.Generator) -> float:
    n = len(hits)
    if n == 0 or resamples <= 0:
        return 0.0
    idx = rng.integers(0, n, size=(resamples, n))
    return float(np.std(hits[idx].mean(axis=1) * 100.0))


def answer_coverage(
    kg: KnowledgeGraph,
    qa_records: Sequence[QARecord],
    hop_list: Iterable[int] = (5, 10),
    schema: OntologySchema | None = None,
    min_len: int = 3,
    bootstrap: int = 1000,
    seed: int = 0,
) -> CoverageReport:
    """Share of questions whose answer is a KG entity, overall and within
    ``k`` undirected hops of any matched question entity."""
    hops = sorted(set(hop_list))
    matcher = SurfaceMatcher(kg, min_len)
    max_k = hops[-1] if hops else 0
    rows = []
    for rec in qa_records:
        answer_ents: set[str] = set()
        for gold in rec.answers:
            answer_ents |= matcher.entities(gold)
        question_ents: set[str] = set()
        for surface in rec.question_entities:
            question_ents |= matcher.entities(surface)
        dist = hop_distances(kg, question_ents, max_k)
        reach = [dist[e] for e in answer_ents if e in dist]
        nearest = min(reach) if reach else None
        rows.append({
            "id": rec.qid,
            "total": bool(answer_ents),
            "nearest_hops": nearest,
            **{f"{k}hop": nearest is not None and nearest <= k for k in hops},
        })
    n = len(rows)
    total = np.array([r["total"] for r in rows], dtype=float)
    khop_arrays = {k: np.array([r[f"{k}hop"] for r in rows], dtype=float) for k in hops}
    rng = np.random.default_rng(seed)
    std = {"contains_answer_total": _bootstrap_std(total, bootstrap, rng)}
    for k in hops:
        std[f"contains_answer_{k}hop"] = _bootstrap_std(khop_arrays[k], bootstrap, rng)
    pct = (lambda a: 100.0 * float(a.sum()) / n if n else 0.0)
    return CoverageReport(
        n_questions=n,
        contains_answer_total=pct(total),
        contains_answer_khop={k: pct(khop_arrays[k]) for k in hops},
        ontology_entailment=ontology_entailment(kg, schema) if schema is not None else None,
        per_question=rows,
        bootstrap_std=std,
    )


# --- entailment ---------------------------------------------------------------

def _recomputed(kg: KnowledgeGraph, schema: OntologySchema, t: KGTriplet) -> bool:
    s_type = kg.entities[t.subject_id].type_id
    o_type = kg.entities[t.object_id].type_id
    return check_alignment(schema, s_type, t.property, o_type).aligned


def ontology_entailment(kg: KnowledgeGraph, schema: OntologySchema) -> float:
    """Percentage of triplets that satisfy the ontology, recomputed from the
    stored entity types (stored flags are ignored). Empty graph -> 100.0."""
    if not kg.triplets:
        return 100.0
    ok = sum(_recomputed(kg, schema, t) for t in kg.triplets)
    return 100.0 * ok / len(kg.triplets)


def filter_misaligned(kg: KnowledgeGraph, schema: OntologySchema) -> KnowledgeGraph:
    """Copy of ``kg`` without misaligned triplets; entities left only by
    dropped triplets are removed too."""
    keep = [t for t in kg.triplets if _recomputed(kg, schema, t)]
    used = {e for t in kg.triplets for e in (t.subject_id, t.object_id)}
    kept_used = {e for t in keep for e in (t.subject_id, t.object_id)}
    out = KnowledgeGraph(kg.embedder)
    remap = {}
    for e in kg.entities.values():
        if e.entity_id in used and e.entity_id not in kept_used:
            continue
        remap[e.entity_id] = out.insert_entity(e.canonical_label, e.type_id)
        for alias in sorted(e.aliases):
            out.add_alias(remap[e.entity_id], alias)
    for t in keep:
        out.insert_triplet(KGTriplet(remap[t.subject_id], t.property, remap[t.object_id],
                                     t.qualifiers, t.aligned, list(t.provenance)))
    return out


# --- neighborhood profile -------------------------------------------------------

@dataclass(frozen=True)
class NeighborhoodProfile:
    by_k: dict[int, float]
    component: float

    def as_row(self) -> dict[str, float]:
        row = {f"neighborhood_{k}hop": v for k, v in sorted(self.by_k.items())}
        row["neighborhood_component"] = self.component
        return row


def neighborhood_profile(
    kg: KnowledgeGraph, seed_surfaces: Iterable[str], k_max: int, min_len: int = 3
) -> NeighborhoodProfile:
    """Relative sizes (share of all entities) of the 1..k_max hop
    neighborhoods of the matched seeds and of their connected component."""
    if k_max < 1:
        raise ValueError("k_max must be >= 1")
    n = len(kg.entities)
    matcher = SurfaceMatcher(kg, min_len)
    seeds: set[str] = set()
    for s in seed_surfaces:
        seeds |= matcher.entities(s)
    dist = hop_distances(kg, seeds)
    if n == 0:
        return NeighborhoodProfile({k: 0.0 for k in range(1, k_max + 1)}, 0.0)
    values = sorted(dist.values())
    by_k = {}
    for k in range(1, k_max + 1):
        by_k[k] = sum(1 for d in values if d <= k) / n
    return NeighborhoodProfile(by_k, len(dist) / n)


# --- comparison tables ------------------------------------------------------------

_FIXED_ORDER = [
    "num_entities", "num_relations", "avg_entity_degree",
    "unique_entities_per_relation", "relation_diversity_per_pair",
    "contains_answer_total",
]


def _column_key(name: str) -> tuple:
    if name in _FIXED_ORDER:
        return (0, _FIXED_ORDER.index(name), 0, name)
    for group, prefix in ((1, "contains_answer_"), (3, "neighborhood_")):
        if name.startswith(prefix) and name.endswith("hop"):
            digits = name[len(prefix):-3]
            if digits.isdigit():
                return (group, 0, int(digits), name)
    if name == "ontology_entailment":
        return (2, 0, 0, name)
    if name == "neighborhood_component":
        return (3, 1, 0, name)
    return (4, 0, 0, name)


@dataclass
class Table:
    columns: list[str]
    rows: list[tuple[str, dict[str, float | int | None]]]

    @staticmethod
    def _fmt(v) -> str:
        if v is None:
            return ""
        if isinstance(v, bool):
            return str(int(v))
        if isinstance(v, int):
            return str(v)
        return f"{v:.2f}"

    def to_tsv(self) -> str:
        lines = ["\t".join(["name"] + self.columns)]
        for name, row in self.rows:
            lines.append("\t".join([name] + [self._fmt(row.get(c)) for c in self.columns]))
        return "\n".join(lines) + "\n"

    def to_text(self) -> str:
        header = ["name"] + self.columns
        body = [[name] + [self._fmt(row.get(c)) for c in self.columns] for name, row in self.rows]
        widths = [max(len(r[i]) for r in [header] + body) for i in range(len(header))]
        out = []
        for j, r in enumerate([header] + body):
            cells = [r[0].ljust(widths[0])] + [c.rjust(w) for c, w in zip(r[1:], widths[1:])]
            out.append("  ".join(cells).rstrip())
            if j == 0:
                out.append("  ".join("-" * w for w in widths))
        return "\n".join(out) + "\n"

    def to_json(self) -> str:
        return json.dumps({"columns": self.columns,
                           "rows": [{"name": n, **{c: r.get(c) for c in self.columns}}
                                    for n, r in self.rows]}, indent=2) + "\n"


def compare_reports(reports: Sequence[tuple[str, object]]) -> Table:
    """Align several reports (GraphStats, CoverageReport, NeighborhoodProfile
    or plain mappings) into one table; missing columns stay blank."""
    if not reports:
        raise ValueError("need at least one report")
    rows = []
    for name, rep in reports:
        if isinstance(rep, Mapping):
            row = dict(rep)
        elif isinstance(rep, (list, tuple)):
            row = {}
            for part in rep:
                row.update(part if isinstance(part, Mapping) else part.as_row())
        else:
            row = rep.as_row()
        rows.append((name, row))
    columns = sorted({c for _, r in rows for c in r}, key=_column_key)
    return Table(columns, rows)
