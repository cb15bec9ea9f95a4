import pytest

_REPORT: dict[int, str] = {}


@pytest.fixture
def report():
    """Record one verdict line per acceptance criterion."""

    def put(n: int, ok: bool, detail: str) -> None:
        line = f"criterion {n}: {'PASS' if ok else 'FAIL'} ({detail})"
        _REPORT[n] = line
        print(line)

    return put


def pytest_terminal_summary(terminalreporter):
    if _REPORT:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_REPORT):
            terminalreporter.write_line(_REPORT[n])
