import datetime as dt

import numpy as np
import pytest

from etfrisk.data import ReturnsPanel

_criteria: dict[int, tuple[str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, text): acceptance criterion covered by a test")


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.outcome != "passed"):
        return
    number = getattr(report, "criterion", None)
    if number is None:
        return
    text = report.criterion_text
    prev = _criteria.get(number)
    outcome = "PASS" if report.outcome == "passed" else "FAIL"
    if prev is None or prev[1] == "PASS":
        _criteria[number] = (text, outcome)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is not None:
        report.criterion = marker.args[0]
        report.criterion_text = marker.args[1]


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        text, outcome = _criteria[number]
        terminalreporter.write_line(f"{outcome} criterion {number:2d}: {text}")


def make_panel(values, ids=None, start=dt.date(2021, 1, 4)):
    values = np.asarray(values, dtype=float)
    ids = ids or [f"E{k}" for k in range(values.shape[0])]
    dates = [start + dt.timedelta(days=k) for k in range(values.shape[1])]
    return ReturnsPanel.from_array(ids, dates, values)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
