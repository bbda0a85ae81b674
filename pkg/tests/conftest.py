from pathlib import Path

import pytest

FIXTURES = Path(__file__).parent / "fixtures"

_criteria: list[tuple[str, bool | None, str]] = []


def record_criterion(name: str, passed: bool | None, detail: str = "") -> None:
    """Log an acceptance criterion outcome for the end-of-run summary; ``None`` means skipped."""
    _criteria.append((name, passed, detail))


@pytest.fixture
def fixtures_dir():
    return FIXTURES


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for name, passed, detail in _criteria:
        status = "SKIP" if passed is None else "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"[{status}] {name}: {detail}")
