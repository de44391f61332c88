"""Shared pytest plumbing: the acceptance-criteria report.

Acceptance tests record one line per criterion through the
``acceptance`` fixture; the collected lines are printed as a summary
block at the end of the run so the verdict for every criterion is
visible even when all tests pass.
"""

import pytest

_LINES: list = []


def record_criterion(name: str, ok: bool, detail: str) -> None:
    _LINES.append(f"[{name}] {'PASS' if ok else 'FAIL'}: {detail}")
    assert ok, f"{name}: {detail}"


def skip_criterion(name: str, reason: str) -> None:
    _LINES.append(f"[{name}] SKIP: {reason}")
    pytest.skip(f"{name}: {reason}")


record_criterion.skip = skip_criterion


@pytest.fixture
def acceptance():
    return record_criterion


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in _LINES:
            terminalreporter.write_line(line)
