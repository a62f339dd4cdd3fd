import pytest

_LINES = []


@pytest.fixture(scope="session")
def report():
    """Record and print one acceptance line: ``report(number, ok, text)``."""
    def emit(number, ok, text):
        line = f"{'PASS' if ok else 'FAIL'} criterion {number:>2}: {text}"
        _LINES.append(line)
        print("\n" + line)
        return ok
    return emit


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
