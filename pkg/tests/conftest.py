import pytest

_VERDICTS = {}


@pytest.fixture
def verdict():
    """Record one acceptance line and return the flag so the test can assert it."""
    def record(n, ok, detail):
        line = f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        _VERDICTS[n] = line
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance")
        for n in sorted(_VERDICTS):
            terminalreporter.write_line(_VERDICTS[n])
