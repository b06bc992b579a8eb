import pytest

ACCEPTANCE: list[str] = []


@pytest.fixture
def acceptance():
    """Collects one result line per acceptance criterion."""
    return ACCEPTANCE


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
