import pytest

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def acceptance_report():
    """Collects one verdict line per acceptance criterion for the terminal summary."""
    def record(number: int, passed: bool | str, detail: str) -> None:
        verdict = passed if isinstance(passed, str) else ("PASS" if passed else "FAIL")
        line = f"criterion {number}: {verdict}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print("\n" + line)
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
