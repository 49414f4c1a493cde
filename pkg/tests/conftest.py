import pytest

_LINES: dict = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion checked by this test")


@pytest.fixture
def record(request):
    """Record the outcome line of the acceptance criterion attached to the test."""
    number, title = request.node.get_closest_marker("criterion").args

    def _record(ok: bool, detail: str) -> bool:
        line = f"criterion {number} [{'PASS' if ok else 'FAIL'}] {title}: {detail}"
        _LINES[number] = line
        print(line)
        return ok

    return _record


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or rep.when != "call":
        return
    number, title = marker.args
    if rep.failed and "[PASS]" in _LINES.get(number, "[PASS]"):
        reason = call.excinfo.exconly().splitlines()[0] if call.excinfo else "failed"
        _LINES[number] = f"criterion {number} [FAIL] {title}: {reason}"


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for number in sorted(_LINES):
            terminalreporter.write_line(_LINES[number])
