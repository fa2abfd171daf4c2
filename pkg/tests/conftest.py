"""Shared acceptance-criterion reporting.

Passing tests have their stdout captured, so the per-criterion PASS/FAIL
lines are replayed in a terminal section after the run summary.
"""

import pytest

_ACCEPTANCE: list[tuple[int, str]] = []


@pytest.fixture
def criterion_report():
    """Record one PASS/FAIL line for an acceptance criterion and assert it."""

    def record(num: int, name: str, passed: bool, detail: str):
        line = f"criterion {num:2d} [{'PASS' if passed else 'FAIL'}] {name}: {detail}"
        _ACCEPTANCE.append((num, line))
        print(line, flush=True)
        assert passed, line

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(_ACCEPTANCE):
            terminalreporter.write_line(line)
