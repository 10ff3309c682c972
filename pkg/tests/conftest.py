import pytest

_VERDICTS: dict[int, str] = {}


@pytest.fixture(scope="session")
def verdict():
    """Record the PASS/FAIL line of one acceptance criterion."""

    def record(number: int, passed: bool, detail: str) -> None:
        _VERDICTS[number] = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"
        print(_VERDICTS[number])

    return record


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_VERDICTS):
        terminalreporter.write_line(_VERDICTS[number])
