import io
import json
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ontokg.embedding import HashingEmbedder
from ontokg.errors import (
    DanglingReferenceError,
    DuplicateIdError,
    InvalidArgumentError,
    NotFoundError,
    SchemaParseError,
)
from ontokg.ontology import (
    EntityTypeRecord,
    OntologySearch,
    PropertyRecord,
    allowed_relations,
    build_schema,
    check_alignment,
    compile_raw_dump,
    export_records,
    load_schema,
)
from tests.fixtures import harness
from tests.oracles import brute_alignment, brute_allowed, dfs_ancestors, random_schema


def T(tid, parents=(), aliases=()):
    return EntityTypeRecord(tid, tid.lower(), frozenset(aliases), frozenset(parents))


def P(pid, subj=(), obj=(), datatype="item"):
    return PropertyRecord(pid, pid.lower(), frozenset(), datatype, frozenset(subj), frozenset(obj))


@pytest.fixture
def film_schema():
    return build_schema(
        [T("Q1"), T("Q2", ["Q1"]), T("Q3", ["Q2"]), T("Q5", ["Q1"])],
        [P("P57", ["Q2"], ["Q5"])],
    )


def test_ancestors_are_reflexive_and_transitive(film_schema):
    assert film_schema.ancestors("Q3") == {"Q1", "Q2", "Q3"}
    assert film_schema.ancestors("Q1") == {"Q1"}


def test_unknown_type_ancestors_not_found(film_schema):
    with pytest.raises(NotFoundError):
        film_schema.ancestors("Q999")


def test_cycle_members_share_ancestors(caplog):
    schema = build_schema([T("A", ["B"]), T("B", ["A", "C"]), T("C")], [])
    assert schema.ancestors("A") == schema.ancestors("B") == {"A", "B", "C"}
    assert schema.cycles == [frozenset({"A", "B"})]
    assert "cycle" in caplog.text


def test_self_loop_is_a_cycle():
    schema = build_schema([T("A", ["A"])], [])
    assert schema.ancestors("A") == {"A"}
    assert schema.cycles == [frozenset({"A"})]


def test_deep_chain_no_recursion_limit():
    n = 5000
    types = [T("N0")] + [T(f"N{i}", [f"N{i - 1}"]) for i in range(1, n)]
    schema = build_schema(types, [])
    assert len(schema.ancestors(f"N{n - 1}")) == n


def test_allowed_relations_forward_and_inverse(film_schema):
    fwd = allowed_relations(film_schema, "Q3", "Q5")
    inv = allowed_relations(film_schema, "Q5", "Q3")
    assert [(p.property_id, o) for p, o in fwd] == [("P57", "forward")]
    assert [(p.property_id, o) for p, o in inv] == [("P57", "inverse")]
    assert allowed_relations(film_schema, "Q5", "Q5") == []


def test_empty_constraint_is_unconstrained():
    schema = build_schema([T("A"), T("B")], [P("P1", [], ["B"])])
    got = [(p.property_id, o) for p, o in allowed_relations(schema, "A", "B")]
    assert got == [("P1", "forward")]
    assert check_alignment(schema, "A", "P1", "B").aligned


def test_check_alignment_reasons(film_schema):
    assert check_alignment(film_schema, "Q3", "P57", "Q5").aligned
    assert check_alignment(film_schema, "Q5", "P57", "Q3").reason == "domain-violation"
    assert check_alignment(film_schema, "Q3", "P57", "Q3").reason == "range-violation"
    assert check_alignment(film_schema, "Q3", "P999", "Q5").reason == "unknown-property"
    assert check_alignment(film_schema, "Qx", "P57", "Q5").reason == "unknown-type"
    assert not check_alignment(film_schema, "Qx", "P57", "Q5")


def test_build_schema_rejects_duplicates_and_dangling():
    with pytest.raises(DuplicateIdError):
        build_schema([T("A"), T("A")], [])
    with pytest.raises(DuplicateIdError):
        build_schema([T("A")], [P("P1"), P("P1")])
    with pytest.raises(DanglingReferenceError):
        build_schema([T("A", ["Z"])], [])
    with pytest.raises(DanglingReferenceError):
        build_schema([T("A")], [P("P1", ["Z"])])


def test_label_always_an_alias(film_schema):
    assert "q3" in film_schema.types["Q3"].aliases


def test_load_schema_reports_line_numbers():
    good = json.dumps({"kind": "type", "type_id": "A", "label": "a"})
    with pytest.raises(SchemaParseError, match="line 2"):
        load_schema(io.StringIO(good + "\n{not json\n"))
    with pytest.raises(SchemaParseError, match="line 1"):
        load_schema(io.StringIO(json.dumps({"kind": "shape"}) + "\n"))
    with pytest.raises(SchemaParseError, match="line 1"):
        load_schema(io.StringIO(json.dumps({"kind": "type", "label": "a"}) + "\n"))


def test_load_schema_drops_unknown_datatype_and_warns_on_extra_fields(caplog):
    rows = [
        {"kind": "type", "type_id": "A", "label": "a", "colour": "red"},
        {"kind": "property", "property_id": "P1", "label": "p", "datatype": "external-id"},
        {"kind": "property", "property_id": "P2", "label": "q", "datatype": "item"},
    ]
    schema = load_schema(io.StringIO("\n".join(json.dumps(r) for r in rows)))
    assert set(schema.properties) == {"P2"}
    assert schema.dropped_properties == 1
    assert "colour" in caplog.text


def test_fixture_schema_loads():
    schema = harness.schema()
    assert schema.ancestors("Q11424") == {"Q11424", "Q2431196", "Q386724", "Q35120"}
    assert check_alignment(schema, "Q11424", "P57", "Q5").aligned


def test_export_is_byte_stable(film_schema):
    first = "\n".join(export_records(film_schema))
    again = "\n".join(export_records(load_schema(io.StringIO(first))))
    assert first == again


def test_compile_raw_dump_drops_non_factual_properties():
    with open(harness.RAW_DUMP, "rb") as fh:
        schema, report = compile_raw_dump(fh)
    assert report.as_dict() == {"types_kept": 4, "properties_kept": 3,
                                "properties_dropped": 2, "dangling_dropped": 0}
    assert set(schema.properties) == {"P57", "P27", "P577"}
    assert schema.properties["P577"].datatype == "point-in-time"


def test_compile_raw_dump_counts_dangling_references():
    rows = [
        {"kind": "type", "id": "Q1", "label": "a", "subclass_of": ["Q404"]},
        {"kind": "property", "id": "P1", "label": "p", "datatype": "wikibase-item",
         "subject_type_constraint": ["Q1", "Q405"]},
    ]
    schema, report = compile_raw_dump(json.dumps(r) for r in rows)
    assert report.dangling_dropped == 2
    assert schema.types["Q1"].parents == frozenset()


def test_search_types_finds_alias():
    schema = harness.schema()
    search = OntologySearch(schema, HashingEmbedder())
    (best, score), *_ = search.search_types("movie", 3)
    assert best == "Q11424"
    assert score == pytest.approx(1.0)
    ids = [tid for tid, _ in search.search_types("film", 10)]
    assert len(ids) == len(set(ids)) == 10


def test_search_rejects_empty_query():
    search = OntologySearch(harness.schema(), HashingEmbedder())
    with pytest.raises(InvalidArgumentError):
        search.search_relations("  ", 3)


def test_search_ties_break_by_id():
    schema = build_schema([T("B", aliases=["same"]), T("A", aliases=["same"])], [])
    ranked = OntologySearch(schema, HashingEmbedder()).search_types("same", 2)
    assert [tid for tid, _ in ranked] == ["A", "B"]


@settings(max_examples=40, deadline=None)
@given(st.integers(min_value=0, max_value=2**32 - 1))
def test_random_schemas_match_brute_force(seed):
    rng = random.Random(seed)
    schema, types, props = random_schema(rng, max_types=25, max_props=10)
    parents = {t.type_id: set(t.parents) for t in types}
    ids = sorted(parents)
    for t in ids:
        assert schema.ancestors(t) == dfs_ancestors(parents, t)
    for _ in range(10):
        s, o = rng.choice(ids), rng.choice(ids)
        got = sorted((p.property_id, orient) for p, orient in allowed_relations(schema, s, o))
        assert got == brute_allowed(types, props, s, o)
        pid = rng.choice([p.property_id for p in props] + ["P0"])
        assert check_alignment(schema, s, pid, o).reason == brute_alignment(types, props, s, pid, o)


@settings(max_examples=30, deadline=None)
@given(st.integers(min_value=0, max_value=2**32 - 1))
def test_allowed_relations_agree_with_alignment(seed):
    rng = random.Random(seed)
    schema, types, props = random_schema(rng, max_types=15, max_props=8)
    ids = sorted(schema.types)
    s, o = rng.choice(ids), rng.choice(ids)
    listed = {(p.property_id, orient) for p, orient in allowed_relations(schema, s, o)}
    for p in props:
        assert ((p.property_id, "forward") in listed) == check_alignment(schema, s, p.property_id, o).aligned
        assert ((p.property_id, "inverse") in listed) == check_alignment(schema, o, p.property_id, s).aligned
