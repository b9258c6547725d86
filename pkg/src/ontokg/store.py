"""Knowledge graph store: canonical entities, alias sets, qualified triplets.

The store keeps everything in memory. When opened on a path it also appends
every mutation to a JSON Lines log and replays that log on the next open.
Snapshots (:meth:`KnowledgeGraph.export`) are a separate, versioned,
deterministic interchange format also used for externally produced graphs.
"""

from __future__ import annotations

import json
import logging
import threading
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Iterable

from .embedding import Embedder, VectorIndex
from .errors import InvalidArgumentError, NotFoundError, SnapshotError

logger = logging.getLogger(__name__)

UNTYPED = "untyped"
SNAPSHOT_FORMAT = "ontokg-kg"
SNAPSHOT_VERSION = 1


@dataclass(frozen=True, order=True)
class Qualifier:
    relation: str
    object: str

    def __post_init__(self) -> None:
        if not self.relation or not self.object:
            raise InvalidArgumentError("qualifier relation and object must be non-empty")


@dataclass(frozen=True, order=True)
class Provenance:
    doc_id: str
    start: int
    end: int


@dataclass
class KGEntity:
    entity_id: str
    canonical_label: str
    type_id: str
    aliases: set[str] = field(default_factory=set)


@dataclass
class KGTriplet:
    subject_id: str
    property: str
    object_id: str
    qualifiers: tuple[Qualifier, ...] = ()
    aligned: bool = False
    provenance: list[Provenance] = field(default_factory=list)

    @property
    def key(self) -> tuple:
        return (self.subject_id, self.property, self.object_id, self.qualifiers)


@dataclass
class Subgraph:
    entities: dict[str, KGEntity]
    triplets: list[KGTriplet]

    def entity_ids(self) -> set[str]:
        return set(self.entities)


@dataclass(frozen=True)
class EntityMatch:
    entity_id: str
    alias: str
    score: float


class KnowledgeGraph:
    def __init__(self, embedder: Embedder | None = None, log_path: str | Path | None = None) -> None:
        self.embedder = embedder
        self.entities: dict[str, KGEntity] = {}
        self.triplets: list[KGTriplet] = []
        self._by_key: dict[tuple, int] = {}
        self._by_label: dict[tuple[str, str], str] = {}
        self._adj: dict[str, set[str]] = {}
        self._next_id = 1
        self._lock = threading.RLock()
        self.alias_index = VectorIndex(embedder) if embedder is not None else None
        self.stats = {"stored": 0, "deduplicated": 0}
        self._log: IO[str] | None = None
        if log_path is not None:
            log_path = Path(log_path)
            if log_path.exists():
                self._replay(log_path)
            self._log = open(log_path, "a", encoding="utf-8")

    # --- mutation -----------------------------------------------------------

    def _append(self, rec: dict) -> None:
        if self._log is not None:
            self._log.write(json.dumps(rec, ensure_ascii=False) + "\n")
            self._log.flush()

    def close(self) -> None:
        if self._log is not None:
            self._log.close()
            self._log = None

    def insert_entity(self, label: str, type_id: str = UNTYPED) -> str:
        """Idempotent on (label, type_id)."""
        if not label or not label.strip():
            raise InvalidArgumentError("entity label must be non-empty")
        with self._lock:
            existing = self._by_label.get((label, type_id))
            if existing is not None:
                return existing
            entity_id = f"E{self._next_id}"
            self._next_id += 1
            self.entities[entity_id] = KGEntity(entity_id, label, type_id, {label})
            self._by_label[(label, type_id)] = entity_id
            self._adj[entity_id] = set()
            if self.alias_index is not None:
                self.alias_index.upsert(entity_id, [label], tag=type_id)
            self._append({"op": "entity", "id": entity_id, "label": label, "type": type_id})
            return entity_id

    def created_entity(self, label: str, type_id: str) -> bool:
        return (label, type_id) not in self._by_label

    def add_alias(self, entity_id: str, surface: str) -> frozenset[str]:
        with self._lock:
            entity = self.entities.get(entity_id)
            if entity is None:
                raise NotFoundError(f"unknown entity {entity_id!r}")
            if not surface or surface in entity.aliases:
                return frozenset(entity.aliases)
            entity.aliases.add(surface)
            if self.alias_index is not None:
                self.alias_index.upsert(entity_id, [surface], tag=entity.type_id)
            self._append({"op": "alias", "id": entity_id, "alias": surface})
            return frozenset(entity.aliases)

    def insert_triplet(self, t: KGTriplet) -> str:
        """Returns ``"stored"`` or ``"deduplicated"``."""
        with self._lock:
            for end in (t.subject_id, t.object_id):
                if end not in self.entities:
                    raise InvalidArgumentError(f"dangling triplet endpoint {end!r}")
            idx = self._by_key.get(t.key)
            if idx is not None:
                existing = self.triplets[idx]
                for p in t.provenance:
                    if p not in existing.provenance:
                        existing.provenance.append(p)
                existing.aligned = existing.aligned or t.aligned
                self.stats["deduplicated"] += 1
                outcome = "deduplicated"
            else:
                stored = KGTriplet(t.subject_id, t.property, t.object_id, tuple(t.qualifiers),
                                   t.aligned, list(dict.fromkeys(t.provenance)))
                self._by_key[t.key] = len(self.triplets)
                self.triplets.append(stored)
                self._adj[t.subject_id].add(t.object_id)
                self._adj[t.object_id].add(t.subject_id)
                self.stats["stored"] += 1
                outcome = "stored"
            self._append({"op": "triplet", **_triplet_record(t)})
            return outcome

    def _replay(self, path: Path) -> None:
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                rec = json.loads(line)
                op = rec.get("op")
                if op == "entity":
                    got = self.insert_entity(rec["label"], rec["type"])
                    if got != rec["id"]:
                        raise SnapshotError(f"{path}:{lineno}: log ids out of sequence")
                elif op == "alias":
                    self.add_alias(rec["id"], rec["alias"])
                elif op == "triplet":
                    self.insert_triplet(_triplet_from_record(rec, lineno))
                else:
                    raise SnapshotError(f"{path}:{lineno}: unknown log op {op!r}")

    # --- queries ------------------------------------------------------------

    def entity(self, entity_id: str) -> KGEntity:
        try:
            return self.entities[entity_id]
        except KeyError:
            raise NotFoundError(f"unknown entity {entity_id!r}") from None

    def label(self, entity_id: str) -> str:
        return self.entity(entity_id).canonical_label

    def neighbors(self, entity_id: str) -> set[str]:
        return self._adj.get(entity_id, set())

    def neighborhood(self, seed_ids: Iterable[str], k: int) -> Subgraph:
        """Entities within ``k`` undirected hops of the seeds, induced triplets."""
        if k < 0:
            raise InvalidArgumentError("hop count must be >= 0")
        seeds = []
        for s in seed_ids:
            if s in self.entities:
                seeds.append(s)
            else:
                logger.warning("neighborhood: ignoring unknown seed %s", s)
        dist = {s: 0 for s in seeds}
        queue = deque(seeds)
        while queue:
            v = queue.popleft()
            if dist[v] == k:
                continue
            for w in sorted(self._adj[v]):
                if w not in dist:
                    dist[w] = dist[v] + 1
                    queue.append(w)
        members = {eid: self.entities[eid] for eid in self.entities if eid in dist}
        triplets = [t for t in self.triplets if t.subject_id in dist and t.object_id in dist]
        return Subgraph(members, triplets)

    def find_entities_by_alias(
        self, query: str, k: int, type_filter: Iterable[str] | None = None
    ) -> list[EntityMatch]:
        """Best-scoring alias per entity, top ``k`` entities."""
        if self.alias_index is None:
            raise InvalidArgumentError("store was opened without an embedder")
        if k < 1:
            raise InvalidArgumentError("k must be >= 1")
        if not query or not query.strip():
            raise InvalidArgumentError("empty query")
        tags = frozenset(type_filter) if type_filter is not None else None
        q = self.alias_index.embedder.embed(query)
        out: list[EntityMatch] = []
        seen: set[str] = set()
        for hit in self.alias_index.top_k_vector(q, None, tags):
            if hit.key in seen:
                continue
            seen.add(hit.key)
            out.append(EntityMatch(hit.key, hit.text, hit.score))
            if len(out) == k:
                break
        return out

    def entities_with_surface(self, surface: str) -> list[str]:
        return [e.entity_id for e in self.entities.values() if surface in e.aliases]

    # --- snapshots ----------------------------------------------------------

    def export(self, sink: IO[str]) -> None:
        sink.write(json.dumps({"format": SNAPSHOT_FORMAT, "version": SNAPSHOT_VERSION}) + "\n")
        for e in self.entities.values():
            sink.write(json.dumps({
                "kind": "entity", "id": e.entity_id, "label": e.canonical_label,
                "type": e.type_id, "aliases": sorted(e.aliases),
            }, ensure_ascii=False) + "\n")
        for t in self.triplets:
            sink.write(json.dumps({"kind": "triplet", **_triplet_record(t)},
                                  ensure_ascii=False) + "\n")

    def export_text(self) -> str:
        import io

        buf = io.StringIO()
        self.export(buf)
        return buf.getvalue()

    @classmethod
    def import_snapshot(cls, source: IO[str] | Iterable[str],
                        embedder: Embedder | None = None) -> "KnowledgeGraph":
        """Load a snapshot; entity ids are renumbered in file order."""
        kg = cls(embedder)
        remap: dict[str, str] = {}
        lines = iter(source)
        header_line = next(lines, "")
        try:
            header = json.loads(header_line) if header_line.strip() else {}
        except json.JSONDecodeError:
            raise SnapshotError("line 1: malformed snapshot header") from None
        if header.get("format") != SNAPSHOT_FORMAT:
            raise SnapshotError("line 1: not a knowledge graph snapshot")
        if header.get("version") != SNAPSHOT_VERSION:
            raise SnapshotError(f"unsupported snapshot version {header.get('version')!r}")
        for lineno, line in enumerate(lines, start=2):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                kind = rec["kind"]
                if kind == "entity":
                    new_id = kg.insert_entity(rec["label"], rec.get("type") or UNTYPED)
                    remap[rec["id"]] = new_id
                    for alias in rec.get("aliases", []):
                        kg.add_alias(new_id, alias)
                elif kind == "triplet":
                    t = _triplet_from_record(rec, lineno)
                    t.subject_id = remap[t.subject_id]
                    t.object_id = remap[t.object_id]
                    kg.insert_triplet(t)
                else:
                    raise SnapshotError(f"line {lineno}: unknown record kind {kind!r}")
            except (KeyError, TypeError, json.JSONDecodeError, InvalidArgumentError) as exc:
                raise SnapshotError(f"line {lineno}: malformed record ({exc})") from None
        return kg

    @classmethod
    def load(cls, path: str | Path, embedder: Embedder | None = None) -> "KnowledgeGraph":
        with open(path, encoding="utf-8") as fh:
            return cls.import_snapshot(fh, embedder)

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            self.export(fh)

    def canonical_form(self) -> tuple:
        """Id-free representation; equal for isomorphic stores."""
        ents = sorted(
            (e.canonical_label, e.type_id, tuple(sorted(e.aliases)))
            for e in self.entities.values()
        )

        def ref(eid: str) -> tuple[str, str]:
            e = self.entities[eid]
            return (e.canonical_label, e.type_id)

        trips = sorted(
            (ref(t.subject_id), t.property, ref(t.object_id), t.qualifiers, t.aligned,
             tuple(sorted(t.provenance)))
            for t in self.triplets
        )
        return (tuple(ents), tuple(trips))

    def check_integrity(self) -> None:
        for t in self.triplets:
            if t.subject_id not in self.entities or t.object_id not in self.entities:
                raise AssertionError(f"dangling triplet {t}")
        for e in self.entities.values():
            if e.canonical_label not in e.aliases:
                raise AssertionError(f"entity {e.entity_id} lacks its label alias")


def _triplet_record(t: KGTriplet) -> dict:
    return {
        "subject": t.subject_id,
        "property": t.property,
        "object": t.object_id,
        "qualifiers": [{"relation": q.relation, "object": q.object} for q in t.qualifiers],
        "aligned": t.aligned,
        "provenance": [{"doc": p.doc_id, "start": p.start, "end": p.end} for p in t.provenance],
    }


def _triplet_from_record(rec: dict, lineno: int) -> KGTriplet:
    return KGTriplet(
        subject_id=rec["subject"],
        property=rec["property"],
        object_id=rec["object"],
        qualifiers=tuple(Qualifier(q["relation"], q["object"]) for q in rec.get("qualifiers", [])),
        aligned=bool(rec.get("aligned", False)),
        provenance=[Provenance(p["doc"], int(p["start"]), int(p["end"]))
                    for p in rec.get("provenance", [])],
    )
