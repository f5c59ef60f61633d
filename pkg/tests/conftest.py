"""Shared pytest configuration.

Tests tagged ``@pytest.mark.acceptance(n, "title")`` are collected into a
per-criterion PASS/FAIL table printed at the end of the run.
"""
from collections import OrderedDict

import pytest

_RESULTS = OrderedDict()


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(n, title): acceptance criterion n")


def pytest_runtest_logreport(report):
    marker = getattr(report, "_acceptance", None)
    if marker is None:
        return
    n, title = marker
    if report.failed:
        _RESULTS[n] = (title, "FAIL")
    elif report.skipped:
        _RESULTS.setdefault(n, (title, "SKIP"))
    elif report.when == "call":
        _RESULTS.setdefault(n, (title, "PASS"))


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    m = item.get_closest_marker("acceptance")
    if m is not None:
        report._acceptance = (m.args[0], m.args[1] if len(m.args) > 1 else "")


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_RESULTS):
        title, status = _RESULTS[n]
        terminalreporter.write_line(f"[{status}] criterion {n:>2}: {title}")
