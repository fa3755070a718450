"""Shared fixtures and the acceptance summary printed after the run."""

from collections import OrderedDict

import numpy as np
import pytest

from dynvo.geometry import Intrinsics

_criteria = OrderedDict()


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion the test checks")


def pytest_runtest_logreport(report):
    marker = getattr(report, "criterion", None)
    if marker is None:
        return
    n, title = marker
    entry = _criteria.setdefault(n, {"title": title, "ok": True, "failed": []})
    if report.failed or report.skipped:
        entry["ok"] = False
        entry["failed"].append(report.nodeid.split("::")[-1])


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    m = item.get_closest_marker("criterion")
    if m is not None:
        report.criterion = tuple(m.args)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in sorted(_criteria):
        e = _criteria[n]
        status = "PASS" if e["ok"] else "FAIL"
        extra = "" if e["ok"] else f"  ({', '.join(dict.fromkeys(e['failed']))})"
        tr.write_line(f"criterion {n}: {status}  {e['title']}{extra}")


@pytest.fixture
def K100():
    """fx = fy = 100 with the principal point at (100, 100)."""
    return Intrinsics(100.0, 100.0, 100.0, 100.0, 201, 201)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
