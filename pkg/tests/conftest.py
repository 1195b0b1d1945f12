import pytest

_rows = []


@pytest.fixture(scope="session")
def verdict():
    """Record one PASS/FAIL line per acceptance criterion; returns the boolean."""
    def record(number: int, name: str, passed: bool, detail: str) -> bool:
        line = f"{'PASS' if passed else 'FAIL'}  [{number:2d}] {name}: {detail}"
        _rows.append((number, line))
        print(line)
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if _rows:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(_rows):
            terminalreporter.write_line(line)
