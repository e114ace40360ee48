"""Collects acceptance outcomes and prints one line per criterion at the end of the run.

Acceptance tests carry ``@pytest.mark.ac(n)``.  A criterion passes when every
test tagged with its number passes; details recorded with ``record_property``
under the key ``detail`` are echoed on the line.
"""

import pytest

N_CRITERIA = 13
_outcomes: dict = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "ac(n): acceptance criterion number n")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("ac")
    if marker is None:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        details = [str(v) for k, v in item.user_properties if k == "detail"]
        _outcomes.setdefault(marker.args[0], []).append((item.name, report.outcome, details))


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for n in range(1, N_CRITERIA + 1):
        parts = _outcomes.get(n)
        if parts is None:
            terminalreporter.write_line(f"AC{n} NOT RUN")
            continue
        ok = all(outcome == "passed" for _, outcome, _ in parts)
        notes = []
        for name, outcome, details in parts:
            label = name.split("[")[0].replace("test_ac%d_" % n, "")
            text = "; ".join(details)
            notes.append(f"{label}={outcome}" + (f" ({text})" if text else ""))
        terminalreporter.write_line(f"AC{n} {'PASS' if ok else 'FAIL'} " + " | ".join(notes))
