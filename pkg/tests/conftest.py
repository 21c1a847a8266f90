"""Prints one pass/fail line per acceptance criterion at the end of the run."""

import pytest

_RESULTS = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion number and title")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    n, title = mark.args
    failed = rep.failed
    if rep.when == "call" or failed:
        detail = dict(item.user_properties).get("detail", "")
        if failed and call.excinfo is not None:
            detail = call.excinfo.exconly().splitlines()[0][:160]
        prev = _RESULTS.get(n)
        # a failure sticks once recorded
        if prev is None or prev[1]:
            _RESULTS[n] = (title, not failed, detail)


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_RESULTS):
        title, ok, detail = _RESULTS[n]
        line = f"[{'PASS' if ok else 'FAIL'}] {n}. {title}"
        terminalreporter.write_line(f"{line}: {detail}" if detail else line)
