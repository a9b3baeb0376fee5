import pytest

_CRITERIA: dict[int, tuple[str, bool, str]] = {}


@pytest.fixture
def criterion():
    """Record one acceptance line: ``criterion(k, name, passed, detail)``."""

    def record(k, name, passed, detail=""):
        _CRITERIA[k] = (name, bool(passed), detail)
        print(f"criterion {k:2d} {name}: {'PASS' if passed else 'FAIL'} ({detail})")

    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(_CRITERIA):
        name, ok, detail = _CRITERIA[k]
        terminalreporter.write_line(f"criterion {k:2d} {name}: {'PASS' if ok else 'FAIL'} ({detail})")
