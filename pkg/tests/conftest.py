from pathlib import Path

import pytest

SCENARIOS = Path(__file__).resolve().parent.parent / "scenarios"

# one line per acceptance criterion, filled in by test_acceptance
ACCEPTANCE_LINES = {}


@pytest.fixture(scope="session")
def scenario_dir() -> Path:
    return SCENARIOS


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])
