import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from ontokg.embedding import HashingEmbedder
from ontokg.extraction import Document, Pipeline, PipelineConfig, chunk_document, load_corpus
from ontokg.llm import CallableBackend, Gateway, StageKind
from ontokg.ontology import OntologySearch
from ontokg.store import KnowledgeGraph
from tests.fixtures import harness
from tests.fixtures.responder import respond


def patched(**overrides):
    """The fixture responder with some stages replaced."""
    def fn(req):
        if req.stage.value in overrides:
            return overrides[req.stage.value](req)
        return respond(req)
    return CallableBackend(fn)


def pipeline(backend, config=None):
    schema = harness.schema()
    emb = HashingEmbedder()
    kg = KnowledgeGraph(emb)
    return Pipeline(schema, OntologySearch(schema, emb), kg, Gateway(backend), config), kg


def facts(kg):
    return {(kg.label(t.subject_id), t.property, kg.label(t.object_id)) for t in kg.triplets}


NOLAN = "In 2010, Nolan directed the science fiction film Inception."


def test_chunking_paragraphs():
    text = "one.\n\n  two.\n\n\n"
    assert [text[a:b] for a, b in chunk_document(text)] == ["one.", "two."]


def test_chunking_splits_long_paragraph_at_sentence_end():
    text = "Aaa bbb. Ccc ddd. Eee fff."
    spans = chunk_document(text, 12)
    assert [text[a:b] for a, b in spans] == ["Aaa bbb.", "Ccc ddd.", "Eee fff."]


@given(st.text(alphabet="ab .\n", max_size=200), st.integers(3, 40))
def test_chunking_covers_all_content(text, limit):
    spans = chunk_document(text, limit)
    assert all(0 <= a < b <= len(text) and b - a <= limit for a, b in spans)
    assert all(b1 <= a2 for (_, b1), (a2, _) in zip(spans, spans[1:]))
    covered = "".join(text[a:b] for a, b in spans)
    assert "".join(covered.split()) == "".join(text.split())


def test_scripted_corpus_build():
    kg, (reports,), _ = harness.scripted_build()
    assert ("Inception", "P57", "Christopher Nolan") in facts(kg)
    assert ("Jack London", "P26", "Charmian London") in facts(kg)
    assert ("The Book of Jack London", "P50", "Charmian London") in facts(kg)
    assert all(t.aligned for t in kg.triplets)
    assert sum(r.stored for r in reports) == 10
    assert [r.chunks for r in reports] == [1, 1, 2, 1, 1]
    assert sum(r.usage.calls for r in reports) > 0


def test_inverse_orientation_swaps_subject_and_object():
    p, kg = pipeline(patched())
    nolan = kg.insert_entity("Christopher Nolan", "Q5")
    p.process_document(Document("d", NOLAN))
    (t,) = [t for t in kg.triplets if t.property == "P57"]
    assert (t.subject_id, t.object_id) == (kg.entities_with_surface("Inception")[0], nolan)
    assert "Nolan" in kg.entity(nolan).aliases
    assert [(q.relation, q.object) for q in t.qualifiers] == [("point in time", "2010")]


def test_off_candidate_type_is_dropped():
    bogus = json.dumps({"subject_type": "spaceship", "object_type": "spaceship"})
    p, kg = pipeline(patched(type_selection=lambda r: bogus))
    report = p.process_document(Document("d", NOLAN))
    assert report.dropped == {"off-candidate": 2}
    assert kg.triplets == []
    assert report.usage.calls == 1 + 2 * 3


def test_failed_relation_selection_keeps_surface_relation_unaligned():
    p, kg = pipeline(patched(relation_selection=lambda r: "???"))
    report = p.process_document(Document("d", NOLAN))
    assert ("Nolan", "directed", "Inception") in facts(kg)
    assert report.aligned == 0 and report.stored == 2


def test_failed_linking_creates_new_entity_and_flags_degraded():
    p, kg = pipeline(patched(entity_linking=lambda r: "not a candidate"))
    kg.insert_entity("Christopher Nolan", "Q5")
    report = p.process_document(Document("d", NOLAN))
    # every mention with at least one candidate went through the failing call
    assert report.degraded == {"link-failed": 4}
    assert kg.entities_with_surface("Nolan") != kg.entities_with_surface("Christopher Nolan")


def test_failed_chunk_is_counted_and_skipped():
    p, kg = pipeline(patched(candidate_extraction=lambda r: "no json"))
    report = p.process_document(Document("d", "Some text.\n\nMore text."))
    assert report.chunks == 2 and report.failed_chunks == 2 and report.stored == 0


def test_type_without_relation_options_keeps_surface():
    row = [{"subject": "Ada", "relation": "likes", "object": "jazz",
            "subject_type": "person", "object_type": "genre", "qualifiers": []}]
    types = json.dumps({"subject_type": "human", "object_type": "genre"})
    p, kg = pipeline(patched(candidate_extraction=lambda r: json.dumps(row),
                             type_selection=lambda r: types))
    report = p.process_document(Document("d", "x"))
    assert facts(kg) == {("Ada", "likes", "jazz")}
    assert report.aligned == 0


def test_parallel_stage_one_matches_sequential():
    docs = load_corpus(harness.CORPUS)
    p1, kg1 = pipeline(patched())
    p1.process_corpus(docs)
    p2, kg2 = pipeline(patched(), PipelineConfig(jobs=4))
    p2.process_corpus(docs)
    assert kg1.export_text() == kg2.export_text()


def test_load_corpus_jsonl(tmp_path):
    path = tmp_path / "c.jsonl"
    path.write_text('{"id": 1, "text": "a"}\n\n{"id": "b", "text": "c"}\n')
    assert load_corpus(path) == [Document("1", "a"), Document("b", "c")]


def test_empty_chunk_rejected():
    p, _ = pipeline(patched())
    with pytest.raises(ValueError):
        p.extract_candidates("   ")


def test_stage_kinds_used_by_build_are_the_construction_stages():
    _, _, gateway = harness.scripted_build()
    stages = {e.stage for e in gateway.exchanges()}
    assert stages == {StageKind.candidate_extraction, StageKind.type_selection,
                      StageKind.relation_selection, StageKind.entity_linking}
