import pytest

# Scoreboard lines registered by the acceptance tests. They are replayed in
# the terminal summary so the per-criterion verdicts stay visible even though
# pytest captures stdout of passing tests.
ACCEPTANCE_LINES = []


@pytest.fixture
def criterion():
    """Report one acceptance criterion: print, register for the summary,
    and fail the test when the criterion does not hold."""

    def report(num: int, ok: bool, detail: str) -> None:
        line = f"CRITERION {num} {'PASS' if ok else 'FAIL'}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        if not ok:
            pytest.fail(line, pytrace=False)

    return report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
