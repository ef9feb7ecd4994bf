"""Shared fixtures plus the acceptance-criterion result banner."""
from __future__ import annotations

import pytest

_results: dict = {}
_by_nodeid: dict = {}


@pytest.fixture
def criterion(request):
    """Register the acceptance criterion a test implements.

    The test's own pass/fail outcome becomes the criterion verdict, printed
    one line per criterion after the run.
    """
    def _register(num: int, description: str):
        _results[num] = {"desc": description, "outcome": "ERROR"}
        _by_nodeid[request.node.nodeid] = num
    return _register


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if rep.when == "call" and item.nodeid in _by_nodeid:
        num = _by_nodeid[item.nodeid]
        _results[num]["outcome"] = "PASS" if rep.passed else "FAIL"


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _results:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for num in sorted(_results):
        entry = _results[num]
        terminalreporter.write_line(
            f"criterion {num:2d}: {entry['outcome']:4s} - {entry['desc']}")
