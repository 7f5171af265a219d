"""Collects acceptance outcomes and prints one line per criterion at the end of the run."""
from collections import OrderedDict

import pytest

_OUTCOMES = OrderedDict()


def pytest_runtest_makereport(item, call):
    marker = item.get_closest_marker("acceptance")
    if marker is None or call.when != "call":
        return
    number, title = marker.args
    passed = call.excinfo is None
    prev = _OUTCOMES.get(number)
    failing = [] if prev is None else prev[2]
    if not passed:
        failing = failing + [item.name]
    _OUTCOMES[number] = (title, (prev is None or prev[1]) and passed, failing)


@pytest.hookimpl(trylast=True)
def pytest_terminal_summary(terminalreporter):
    if not _OUTCOMES:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_OUTCOMES):
        title, passed, failing = _OUTCOMES[number]
        line = f"AC{number:<2} {'PASS' if passed else 'FAIL'}  {title}"
        if failing:
            line += f"  (failing: {', '.join(failing)})"
        terminalreporter.write_line(line)
