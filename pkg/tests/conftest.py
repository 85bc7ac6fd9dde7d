from __future__ import annotations

import sys
from pathlib import Path

# make the shared helpers (epw_text, oracles) importable from test modules
sys.path.insert(0, str(Path(__file__).parent))

import pytest

_ACCEPTANCE = {}


@pytest.fixture(scope="session")
def acceptance_log():
    return _ACCEPTANCE


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    if report.when == "call":
        item._body_passed = report.passed


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        outcome, seconds, notes = _ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number:2d}: {outcome}  ({seconds:.1f} s)  {notes}")
