import pytest

from memqkd.core import load_config

# filled by test_acceptance; echoed at the end of the run so the verdicts
# show up even when pytest captures stdout
ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def defaults():
    return load_config(None)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
