"""Collects acceptance-criterion outcomes and prints one line per criterion."""

import pytest

CRITERIA = {
    1: "schedule golden values",
    2: "decay identity across policies",
    3: "continuity and monotonicity",
    4: "exponential vs polynomial crossover",
    5: "gradient correctness (finite differences)",
    6: "optimizer oracle equivalence and clipping properties",
    7: "divergence detector fixtures and monotonicity",
    8: "depth-growth analogue",
    9: "end-to-end determinism and resume",
    10: "four-policy desk-scale sweep",
}

_outcomes: dict[int, list[str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(n): test belongs to acceptance criterion n")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    n = marker.args[0]
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        _outcomes.setdefault(n, []).append(report.outcome)


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for n, title in CRITERIA.items():
        results = _outcomes.get(n)
        if not results:
            status = "NOT RUN"
        elif all(r == "passed" for r in results):
            status = "PASS"
        else:
            status = "FAIL"
        terminalreporter.write_line(f"criterion {n:2d} {status:7s} {title}")
