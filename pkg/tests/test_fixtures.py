from tests.fixtures import harness, regenerate


def test_committed_fixtures_match_responder(tmp_path):
    regenerate.main(tmp_path)
    for path in (harness.BUILD_RESPONSES, harness.QA_RESPONSES, harness.KG_SNAPSHOT):
        assert (tmp_path / path.name).read_text() == path.read_text(), path.name
