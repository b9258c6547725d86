"""Wikidata-style ontology schema: type taxonomy, properties, constraints.

Schema files are JSON Lines with one record per line, discriminated by a
``kind`` field (``"type"`` or ``"property"``). Raw dumps are turned into
that format by :func:`compile_raw_dump`.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import IO, Iterable, Iterator

from .embedding import Embedder, VectorIndex
from .errors import (
    DanglingReferenceError,
    DuplicateIdError,
    InvalidArgumentError,
    NotFoundError,
    SchemaParseError,
)

logger = logging.getLogger(__name__)

DATATYPES = ("item", "quantity", "point-in-time", "string")

# Raw Wikidata datatype names that map onto the factual allowlist.
RAW_DATATYPES = {
    "wikibase-item": "item",
    "quantity": "quantity",
    "time": "point-in-time",
    "string": "string",
}

FORWARD = "forward"
INVERSE = "inverse"

_TYPE_FIELDS = {"kind", "type_id", "label", "aliases", "parents"}
_PROPERTY_FIELDS = {
    "kind", "property_id", "label", "aliases", "datatype",
    "allowed_subject_types", "allowed_object_types",
}


@dataclass(frozen=True)
class EntityTypeRecord:
    type_id: str
    label: str
    aliases: frozenset[str]
    parents: frozenset[str] = frozenset()


@dataclass(frozen=True)
class PropertyRecord:
    property_id: str
    label: str
    aliases: frozenset[str]
    datatype: str = "item"
    allowed_subject_types: frozenset[str] = frozenset()
    allowed_object_types: frozenset[str] = frozenset()


@dataclass(frozen=True)
class Alignment:
    """Verdict of :func:`check_alignment`. ``reason`` is None when aligned."""

    reason: str | None = None

    @property
    def aligned(self) -> bool:
        return self.reason is None

    def __bool__(self) -> bool:
        return self.aligned


ALIGNED = Alignment()
UNKNOWN_PROPERTY = Alignment("unknown-property")
UNKNOWN_TYPE = Alignment("unknown-type")
DOMAIN_VIOLATION = Alignment("domain-violation")
RANGE_VIOLATION = Alignment("range-violation")


@dataclass
class OntologySchema:
    types: dict[str, EntityTypeRecord] = field(default_factory=dict)
    properties: dict[str, PropertyRecord] = field(default_factory=dict)
    ancestor_closure: dict[str, frozenset[str]] = field(default_factory=dict)
    cycles: list[frozenset[str]] = field(default_factory=list)
    dropped_properties: int = 0

    def ancestors(self, type_id: str) -> frozenset[str]:
        try:
            return self.ancestor_closure[type_id]
        except KeyError:
            raise NotFoundError(f"unknown type {type_id!r}") from None

    def type_label(self, type_id: str) -> str:
        rec = self.types.get(type_id)
        return rec.label if rec else type_id

    def property_label(self, property_id: str) -> str:
        rec = self.properties.get(property_id)
        return rec.label if rec else property_id


def _strongly_connected(nodes: list[str], succ: dict[str, frozenset[str]]) -> list[list[str]]:
    """Iterative Tarjan; components come out sinks-first."""
    index: dict[str, int] = {}
    low: dict[str, int] = {}
    on_stack: set[str] = set()
    stack: list[str] = []
    out: list[list[str]] = []
    counter = 0
    for root in nodes:
        if root in index:
            continue
        work = [(root, iter(sorted(succ[root])))]
        index[root] = low[root] = counter
        counter += 1
        stack.append(root)
        on_stack.add(root)
        while work:
            v, it = work[-1]
            advanced = False
            for w in it:
                if w not in index:
                    index[w] = low[w] = counter
                    counter += 1
                    stack.append(w)
                    on_stack.add(w)
                    work.append((w, iter(sorted(succ[w]))))
                    advanced = True
                    break
                if w in on_stack:
                    low[v] = min(low[v], index[w])
            if advanced:
                continue
            work.pop()
            if work:
                parent = work[-1][0]
                low[parent] = min(low[parent], low[v])
            if low[v] == index[v]:
                comp = []
                while True:
                    w = stack.pop()
                    on_stack.discard(w)
                    comp.append(w)
                    if w == v:
                        break
                out.append(comp)
    return out


def compute_closure(
    parents: dict[str, frozenset[str]],
) -> tuple[dict[str, frozenset[str]], list[frozenset[str]]]:
    """Reflexive-transitive closure over parent edges.

    Members of a cycle share one ancestor set. Returns the closure and the
    list of cyclic components found.
    """
    closure: dict[str, frozenset[str]] = {}
    cycles: list[frozenset[str]] = []
    comp_of: dict[str, int] = {}
    for ci, comp in enumerate(_strongly_connected(sorted(parents), parents)):
        members = frozenset(comp)
        for v in comp:
            comp_of[v] = ci
        if len(comp) > 1 or any(v in parents[v] for v in comp):
            cycles.append(members)
        acc = set(members)
        for v in comp:
            for p in parents[v]:
                if comp_of.get(p) != ci:
                    acc |= closure[p]
        frozen = frozenset(acc)
        for v in comp:
            closure[v] = frozen
    return closure, cycles


def _str_set(value, line: int, name: str) -> frozenset[str]:
    if value is None:
        return frozenset()
    if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
        raise SchemaParseError(line, f"{name} must be a list of strings")
    return frozenset(value)


def _require_str(rec: dict, key: str, line: int) -> str:
    value = rec.get(key)
    if not isinstance(value, str) or not value:
        raise SchemaParseError(line, f"missing or empty {key!r}")
    return value


def build_schema(
    types: Iterable[EntityTypeRecord],
    properties: Iterable[PropertyRecord],
    dropped_properties: int = 0,
) -> OntologySchema:
    type_map: dict[str, EntityTypeRecord] = {}
    for t in types:
        if t.type_id in type_map:
            raise DuplicateIdError(f"duplicate type id {t.type_id!r}")
        if t.label not in t.aliases:
            t = EntityTypeRecord(t.type_id, t.label, t.aliases | {t.label}, t.parents)
        type_map[t.type_id] = t
    prop_map: dict[str, PropertyRecord] = {}
    for p in properties:
        if p.property_id in prop_map:
            raise DuplicateIdError(f"duplicate property id {p.property_id!r}")
        if p.label not in p.aliases:
            p = PropertyRecord(p.property_id, p.label, p.aliases | {p.label}, p.datatype,
                               p.allowed_subject_types, p.allowed_object_types)
        prop_map[p.property_id] = p
    for t in type_map.values():
        missing = t.parents - type_map.keys()
        if missing:
            raise DanglingReferenceError(
                f"type {t.type_id!r} has unknown parents {sorted(missing)}")
    for p in prop_map.values():
        missing = (p.allowed_subject_types | p.allowed_object_types) - type_map.keys()
        if missing:
            raise DanglingReferenceError(
                f"property {p.property_id!r} constrains unknown types {sorted(missing)}")
    closure, cycles = compute_closure({tid: t.parents for tid, t in type_map.items()})
    for comp in cycles:
        logger.warning("taxonomy cycle among types %s; members share one ancestor set",
                       sorted(comp))
    return OntologySchema(type_map, prop_map, closure, cycles, dropped_properties)


def load_schema(source: IO[bytes] | IO[str] | Iterable[str | bytes]) -> OntologySchema:
    """Parse a JSON Lines schema stream into an :class:`OntologySchema`."""
    types: list[EntityTypeRecord] = []
    props: list[PropertyRecord] = []
    dropped = 0
    for lineno, raw in enumerate(source, start=1):
        if isinstance(raw, bytes):
            raw = raw.decode("utf-8")
        if not raw.strip():
            continue
        try:
            rec = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise SchemaParseError(lineno, f"invalid JSON: {exc.msg}") from None
        if not isinstance(rec, dict):
            raise SchemaParseError(lineno, "record must be a JSON object")
        kind = rec.get("kind")
        if kind == "type":
            known = _TYPE_FIELDS
            types.append(EntityTypeRecord(
                type_id=_require_str(rec, "type_id", lineno),
                label=_require_str(rec, "label", lineno),
                aliases=_str_set(rec.get("aliases"), lineno, "aliases"),
                parents=_str_set(rec.get("parents"), lineno, "parents"),
            ))
        elif kind == "property":
            known = _PROPERTY_FIELDS
            datatype = rec.get("datatype", "item")
            pid = _require_str(rec, "property_id", lineno)
            if datatype not in DATATYPES:
                logger.warning("line %d: dropping property %s with datatype %r",
                               lineno, pid, datatype)
                dropped += 1
                continue
            props.append(PropertyRecord(
                property_id=pid,
                label=_require_str(rec, "label", lineno),
                aliases=_str_set(rec.get("aliases"), lineno, "aliases"),
                datatype=datatype,
                allowed_subject_types=_str_set(
                    rec.get("allowed_subject_types"), lineno, "allowed_subject_types"),
                allowed_object_types=_str_set(
                    rec.get("allowed_object_types"), lineno, "allowed_object_types"),
            ))
        else:
            raise SchemaParseError(lineno, f"unknown record kind {kind!r}")
        extra = rec.keys() - known
        if extra:
            logger.warning("line %d: ignoring unknown fields %s", lineno, sorted(extra))
    return build_schema(types, props, dropped)


def export_records(schema: OntologySchema) -> Iterator[str]:
    for tid in sorted(schema.types):
        t = schema.types[tid]
        yield json.dumps({
            "kind": "type", "type_id": t.type_id, "label": t.label,
            "aliases": sorted(t.aliases), "parents": sorted(t.parents),
        }, ensure_ascii=False)
    for pid in sorted(schema.properties):
        p = schema.properties[pid]
        yield json.dumps({
            "kind": "property", "property_id": p.property_id, "label": p.label,
            "aliases": sorted(p.aliases), "datatype": p.datatype,
            "allowed_subject_types": sorted(p.allowed_subject_types),
            "allowed_object_types": sorted(p.allowed_object_types),
        }, ensure_ascii=False)


def export_schema(schema: OntologySchema, sink: IO[str]) -> None:
    for line in export_records(schema):
        sink.write(line + "\n")


def ancestors(schema: OntologySchema, t: str) -> frozenset[str]:
    return schema.ancestors(t)


def _slot_ok(type_ancestors: frozenset[str], allowed: frozenset[str]) -> bool:
    # empty constraint set = unconstrained slot
    return not allowed or not type_ancestors.isdisjoint(allowed)


def allowed_relations(
    schema: OntologySchema, s_type: str, o_type: str
) -> list[tuple[PropertyRecord, str]]:
    """Properties that can connect the two types, in either orientation.

    ``inverse`` means the property is valid once subject and object are
    swapped. Sorted by property id, forward before inverse.
    """
    s_anc = schema.ancestors(s_type)
    o_anc = schema.ancestors(o_type)
    out: list[tuple[PropertyRecord, str]] = []
    for pid in sorted(schema.properties):
        p = schema.properties[pid]
        subj, obj = p.allowed_subject_types, p.allowed_object_types
        if _slot_ok(s_anc, subj) and _slot_ok(o_anc, obj):
            out.append((p, FORWARD))
        if _slot_ok(o_anc, subj) and _slot_ok(s_anc, obj):
            out.append((p, INVERSE))
    return out


def check_alignment(schema: OntologySchema, s_type: str, p: str, o_type: str) -> Alignment:
    """Never raises; unknown ids are reported as misalignment reasons."""
    prop = schema.properties.get(p)
    if prop is None:
        return UNKNOWN_PROPERTY
    if s_type not in schema.types or o_type not in schema.types:
        return UNKNOWN_TYPE
    if not _slot_ok(schema.ancestor_closure[s_type], prop.allowed_subject_types):
        return DOMAIN_VIOLATION
    if not _slot_ok(schema.ancestor_closure[o_type], prop.allowed_object_types):
        return RANGE_VIOLATION
    return ALIGNED


class OntologySearch:
    """Dense search over type and property names plus their aliases."""

    def __init__(self, schema: OntologySchema, embedder: Embedder) -> None:
        self.schema = schema
        self.types = VectorIndex(embedder)
        self.relations = VectorIndex(embedder)
        for tid in sorted(schema.types):
            t = schema.types[tid]
            self.types.upsert(tid, sorted(t.aliases))
        for pid in sorted(schema.properties):
            p = schema.properties[pid]
            self.relations.upsert(pid, sorted(p.aliases))

    @staticmethod
    def _best_per_key(index: VectorIndex, query: str, k: int) -> list[tuple[str, float]]:
        if not query or not query.strip():
            raise InvalidArgumentError("empty query")
        if k < 1:
            raise InvalidArgumentError("k must be >= 1")
        best: dict[str, float] = {}
        for hit in index.top_k_vector(index.embedder.embed(query), None):
            if hit.key not in best:
                best[hit.key] = hit.score
        ranked = sorted(best.items(), key=lambda kv: (-kv[1], kv[0]))
        return ranked[:k]

    def search_types(self, query: str, k: int) -> list[tuple[str, float]]:
        return self._best_per_key(self.types, query, k)

    def search_relations(self, query: str, k: int) -> list[tuple[str, float]]:
        return self._best_per_key(self.relations, query, k)


@dataclass
class CompileReport:
    types_kept: int = 0
    properties_kept: int = 0
    properties_dropped: int = 0
    dangling_dropped: int = 0

    def as_dict(self) -> dict[str, int]:
        return dict(self.__dict__)


def compile_raw_dump(rows: Iterable[str | bytes]) -> tuple[OntologySchema, CompileReport]:
    """Convert raw dump rows into a schema.

    Raw type rows carry ``id``, ``label``, ``aliases``, ``instance_of`` and
    ``subclass_of``; raw property rows carry ``id``, ``label``, ``aliases``,
    a Wikidata ``datatype`` name and the subject/value type constraint lists
    ``subject_type_constraint`` / ``value_type_constraint``. Properties with
    non-factual datatypes are dropped, as are references to types missing
    from the dump.
    """
    report = CompileReport()
    raw_types: list[dict] = []
    raw_props: list[dict] = []
    for lineno, raw in enumerate(rows, start=1):
        if isinstance(raw, bytes):
            raw = raw.decode("utf-8")
        if not raw.strip():
            continue
        try:
            rec = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise SchemaParseError(lineno, f"invalid JSON: {exc.msg}") from None
        kind = rec.get("kind") if isinstance(rec, dict) else None
        if kind == "type":
            _require_str(rec, "id", lineno)
            _require_str(rec, "label", lineno)
            raw_types.append(rec)
        elif kind == "property":
            _require_str(rec, "id", lineno)
            _require_str(rec, "label", lineno)
            raw_props.append(rec)
        else:
            raise SchemaParseError(lineno, f"unknown record kind {kind!r}")

    known = {r["id"] for r in raw_types}

    def keep(ids) -> frozenset[str]:
        ids = set(ids or [])
        report.dangling_dropped += len(ids - known)
        return frozenset(ids & known)

    types = [
        EntityTypeRecord(
            r["id"], r["label"], frozenset(r.get("aliases") or []),
            keep(list(r.get("instance_of") or []) + list(r.get("subclass_of") or [])),
        )
        for r in raw_types
    ]
    props = []
    for r in raw_props:
        datatype = RAW_DATATYPES.get(r.get("datatype", ""))
        if datatype is None:
            report.properties_dropped += 1
            continue
        props.append(PropertyRecord(
            r["id"], r["label"], frozenset(r.get("aliases") or []), datatype,
            keep(r.get("subject_type_constraint")), keep(r.get("value_type_constraint")),
        ))
    report.types_kept = len(types)
    report.properties_kept = len(props)
    return build_schema(types, props, report.properties_dropped), report
