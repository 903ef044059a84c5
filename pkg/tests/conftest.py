import pytest

_ACCEPTANCE: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, title): numbered acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("acceptance")
    if mark is None or report.when not in ("setup", "call"):
        return
    number, title = mark.args
    entry = _ACCEPTANCE.setdefault(number, {"title": title, "ok": True, "details": []})
    if report.failed:
        entry["ok"] = False
    if report.when == "call":
        entry["details"] += [str(v) for k, v in item.user_properties if k == "measured"]


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        e = _ACCEPTANCE[number]
        detail = f"  ({'; '.join(e['details'])})" if e["details"] else ""
        terminalreporter.write_line(f"criterion {number}: {'PASS' if e['ok'] else 'FAIL'}  {e['title']}{detail}")


@pytest.fixture
def measured(record_property):
    """Attach a measured value to the acceptance summary line."""
    return lambda text: record_property("measured", text)

