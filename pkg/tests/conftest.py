import pytest

_VERDICTS: dict = {}


@pytest.fixture
def verdict(request):
    """Record a criterion outcome and print a one-line verdict."""

    def record(number: int, ok: bool, detail: str = ""):
        line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}".rstrip(": ")
        _VERDICTS[number] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_VERDICTS):
        terminalreporter.write_line(_VERDICTS[number])
