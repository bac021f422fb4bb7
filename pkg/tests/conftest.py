"""Prints the acceptance summary and enforces the whole-suite time budget."""

from __future__ import annotations

import time

import pytest

SUITE_BUDGET_S = 60.0

# criterion number -> (title, passed, detail); filled by test_acceptance
ACCEPTANCE: dict = {}

_start = time.perf_counter()


def pytest_sessionfinish(session, exitstatus):
    elapsed = time.perf_counter() - _start
    session.config._suite_elapsed = elapsed
    if elapsed >= SUITE_BUDGET_S and session.exitstatus == 0:
        session.exitstatus = pytest.ExitCode.TESTS_FAILED


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        title, ok, detail = ACCEPTANCE[n]
        tr.write_line(f"{'PASS' if ok else 'FAIL'} [{n:>2}] {title}: {detail}")
    elapsed = getattr(config, "_suite_elapsed", time.perf_counter() - _start)
    ok = elapsed < SUITE_BUDGET_S
    tr.write_line(f"{'PASS' if ok else 'FAIL'} [11] full suite runtime: {elapsed:.1f} s (budget {SUITE_BUDGET_S:.0f} s)")
