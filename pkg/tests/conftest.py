from __future__ import annotations

from pathlib import Path

import pytest

from samdeploy.sam import SamTable, parse_sam

REPO_ROOT = Path(__file__).resolve().parents[1]
SPAIN_SAM = REPO_ROOT / "data" / "spain6.sam"

# one line per acceptance criterion, echoed after the test summary so the
# pass/fail verdicts and their measured values are visible in one block
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def spain_text() -> str:
    return SPAIN_SAM.read_text()


@pytest.fixture(scope="session")
def spain(spain_text: str) -> SamTable:
    return parse_sam(spain_text)
