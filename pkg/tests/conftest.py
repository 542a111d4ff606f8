import pytest

RESULTS = {}


@pytest.fixture
def record():
    """Record one acceptance line: ``record(number, passed, detail)``."""

    def _record(number, passed, detail=""):
        RESULTS[number] = (bool(passed), detail)
        return passed

    return _record


def pytest_terminal_summary(terminalreporter):
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(RESULTS):
        ok, detail = RESULTS[n]
        terminalreporter.write_line(f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
