import pytest

_CRITERIA: list[tuple[str, bool, str]] = []


@pytest.fixture
def criterion():
    """Record one acceptance line, then fail the test if the criterion is not met."""

    def record(name: str, passed: bool, detail: str) -> None:
        _CRITERIA.append((name, bool(passed), detail))
        print(f"{'PASS' if passed else 'FAIL'}  {name}: {detail}")
        assert passed, f"{name}: {detail}"

    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for name, passed, detail in _CRITERIA:
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {name}: {detail}")
    n_pass = sum(p for _, p, _ in _CRITERIA)
    terminalreporter.write_line(f"{n_pass}/{len(_CRITERIA)} criteria met")
