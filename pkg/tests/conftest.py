import pytest

_LINES: dict = {}


class AcceptanceLog:
    """Collects one verdict line per acceptance criterion."""

    def check(self, number, title, ok, detail=""):
        _LINES[number] = f"criterion {number:>2} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
        print(_LINES[number])
        assert ok, _LINES[number]


@pytest.fixture(scope="session")
def acceptance():
    return AcceptanceLog()


def pytest_terminal_summary(terminalreporter):
    if not _LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(_LINES):
        terminalreporter.write_line(_LINES[k])
