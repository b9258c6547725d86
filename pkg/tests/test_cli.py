import json

import pytest

from ontokg.cli import main
from ontokg.store import KnowledgeGraph
from tests.fixtures import harness

CFG = str(harness.HERE / "run.cfg")


@pytest.fixture
def built(tmp_path):
    out = tmp_path / "run"
    assert main(["build", "--config", CFG, "--out", str(out)]) == 0
    return out


def test_build_writes_run_directory(built):
    names = {p.name for p in built.iterdir()}
    assert {"kg.jsonl", "ingest_reports.jsonl", "exchanges.jsonl", "usage.json",
            "manifest.json", "run.cfg"} <= names
    assert (built / "kg.jsonl").read_text() == harness.KG_SNAPSHOT.read_text()
    manifest = json.loads((built / "manifest.json").read_text())
    assert manifest["commands"]["build"]["llm_backend"] == "scripted:build_responses.jsonl"


def test_build_rerun_from_saved_config(built, tmp_path):
    again = tmp_path / "again"
    assert main(["build", "--config", str(built / "run.cfg"), "--out", str(again)]) == 0
    assert (again / "kg.jsonl").read_text() == (built / "kg.jsonl").read_text()


def test_qa_and_usage(built, capsys):
    code = main(["qa", "--config", CFG, "--out", str(built), "--dataset", str(harness.QA_DATASET),
                 "--backend", f"scripted:{harness.QA_RESPONSES}", "--per-question"])
    assert code == 0
    out = capsys.readouterr().out
    assert "EM=75.0" in out and "Charmian London" in out
    traces = [json.loads(line) for line in (built / "traces.jsonl").read_text().splitlines()]
    assert [len(t["steps"]) for t in traces] == [2, 1, 1, 5]
    assert main(["usage", str(built)]) == 0
    usage = json.loads(capsys.readouterr().out)
    assert usage == json.loads((built / "usage.json").read_text())


def test_qa_empty_dataset(built, tmp_path, capsys):
    empty = tmp_path / "empty.jsonl"
    empty.write_text("")
    code = main(["qa", "--config", CFG, "--out", str(built), "--dataset", str(empty),
                 "--backend", f"scripted:{harness.QA_RESPONSES}"])
    assert code == 0 and "questions=0" in capsys.readouterr().out


def test_stats_and_coverage_tables(tmp_path, capsys):
    snap = str(harness.KG_SNAPSHOT)
    assert main(["stats", snap, snap, "--names", "x,y", "--format", "tsv",
                 "--out", str(tmp_path)]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0].startswith("name\tnum_entities") and lines[1].startswith("x\t13\t8")
    assert (tmp_path / "stats.tsv").exists() and (tmp_path / "stats.txt").exists()
    assert main(["coverage", snap, "--dataset", str(harness.QA_DATASET),
                 "--ontology", str(harness.SCHEMA), "--profile-k", "2", "--format", "json"]) == 0
    row = json.loads(capsys.readouterr().out)["rows"][0]
    assert row["contains_answer_total"] == 75.0 and row["ontology_entailment"] == 100.0
    assert "neighborhood_2hop" in row


def test_compile_ontology(tmp_path, capsys):
    out = tmp_path / "schema.jsonl"
    assert main(["compile-ontology", str(harness.RAW_DUMP), str(out)]) == 0
    assert json.loads(capsys.readouterr().out)["properties_dropped"] == 2
    assert len(out.read_text().splitlines()) == 4 + 3


def test_exit_codes(tmp_path):
    assert main([]) == 1
    assert main(["build", "--ontology", str(tmp_path / "missing")]) == 1
    assert main(["build", "--config", CFG, "--backend", "magic"]) == 1
    assert main(["stats", str(tmp_path / "nope.jsonl")]) == 1
    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"format": "ontokg-kg", "version": 1}\n{"kind": "blob"}\n')
    assert main(["stats", str(bad)]) == 2
    # build prompts are not in the QA fixture file -> backend error
    assert main(["build", "--config", CFG, "--out", str(tmp_path / "o"),
                 "--backend", f"scripted:{harness.QA_RESPONSES}"]) == 3


def test_flags_override_config(tmp_path):
    out = tmp_path / "o"
    assert main(["build", "--config", CFG, "--out", str(out), "--hop-k", "3"]) == 0
    assert "hop_k = 3" in (out / "run.cfg").read_text()
    kg = KnowledgeGraph.load(out / "kg.jsonl")
    assert len(kg.triplets) == 10
