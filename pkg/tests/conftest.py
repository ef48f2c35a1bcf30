import pytest

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def report():
    """report(tag, ok, detail) records one acceptance line and prints it live."""
    def _report(tag, ok, detail=""):
        line = f"[{'PASS' if ok else 'FAIL'}] {tag}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok
    return _report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
