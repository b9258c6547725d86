import pytest

_results: list[tuple[str, str, str]] = []


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance: acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    if report.when != "call" or item.get_closest_marker("acceptance") is None:
        return
    detail = dict(report.user_properties).get("detail", "")
    if report.failed:
        detail = str(call.excinfo.value).splitlines()[0] if call.excinfo else ""
    _results.append(("PASS" if report.passed else "FAIL", item.callspec.id, detail))


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for status, name, detail in _results:
        terminalreporter.write_line(f"{status}  {name}: {detail}")
