import pytest

_LINES = []


@pytest.fixture
def acceptance_line():
    """Record one "[PASS]/[FAIL] criterion N: ..." line for the summary."""

    def record(n, ok, detail):
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {n}: {detail}"
        _LINES.append((n, line))
        print(line)
        return line

    return record


def pytest_terminal_summary(terminalreporter):
    if not _LINES:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(_LINES):
        terminalreporter.write_line(line)
