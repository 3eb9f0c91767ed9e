"""Collects acceptance-criterion outcomes and prints one line per criterion."""

import pytest

RESULTS = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, title = marker.args
    failed = report.failed or (report.when == "call" and report.skipped)
    if report.when == "call" or failed:
        RESULTS[number] = (title, "FAIL" if failed else "PASS", report.duration)


def pytest_terminal_summary(terminalreporter):
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(RESULTS):
        title, status, duration = RESULTS[number]
        terminalreporter.write_line(f"criterion {number}: {status}  {title}  ({duration:.1f} s)")
