import os
import sys
import time

sys.path.insert(0, os.path.dirname(__file__))

_criteria = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title, budget): acceptance criterion")


def pytest_runtest_setup(item):
    item._start = time.perf_counter()


def pytest_runtest_makereport(item, call):
    marker = item.get_closest_marker("criterion")
    if marker is None or call.when != "call":
        return
    number, title, budget = marker.args
    elapsed = time.perf_counter() - item._start
    failed = call.excinfo is not None
    prev = _criteria.get(number)
    ok = not failed and (prev is None or prev[1])
    _criteria[number] = (title, ok, elapsed + (prev[2] if prev else 0.0), budget)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        title, ok, elapsed, budget = _criteria[number]
        limit = f" (budget {budget:g} s)" if budget else ""
        terminalreporter.write_line(
            f"criterion {number}: {'PASS' if ok else 'FAIL'}  {title}  [{elapsed:.1f} s{limit}]"
        )
