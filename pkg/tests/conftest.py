"""Collects acceptance verdicts and prints one line per criterion after the run."""

from __future__ import annotations

import pytest

_VERDICTS: dict[int, tuple[str, str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): numbered acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, title = marker.args
    detail = dict(report.user_properties).get("detail", "")
    if report.when == "call" or (report.when == "setup" and not report.passed):
        verdict = "PASS" if report.passed else ("SKIP" if report.skipped else "FAIL")
        _VERDICTS[number] = (verdict, title, detail)


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_VERDICTS):
        verdict, title, detail = _VERDICTS[number]
        line = f"criterion {number:>2} {verdict}  {title}"
        terminalreporter.write_line(f"{line}  [{detail}]" if detail else line)
