import pytest

from qbatt.runner.validation import Suite

ACCEPTANCE_LINES: dict = {}


@pytest.fixture(scope="session")
def suite():
    """Full-size validation runs, memoised across the acceptance tests."""
    return Suite(fast=False)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[number])
