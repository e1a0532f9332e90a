"""Acceptance bookkeeping: one PASS/FAIL line per criterion in the terminal summary."""

from collections import defaultdict

import pytest

CRITERIA = {
    1: "simulated HOM histograms agree with the oracle and the fitted model",
    2: "visibility versus detuning, prediction and simulated pipeline",
    3: "couple #1 long-run and best-window visibility",
    4: "quantum-beat detuning recovery and bin washout",
    5: "resolution-limited flag around 1 GHz",
    6: "HBT purity at count-rate statistics",
    7: "correlator exactness and throughput",
    8: "Stark-shift auto-tuning",
    9: "property suites",
}

_outcomes = defaultdict(list)
_details = defaultdict(list)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    m = item.get_closest_marker("criterion")
    if m is None:
        return
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        _outcomes[m.args[0]].append(rep.passed)


@pytest.fixture
def note(request):
    """``note(text)`` attaches a detail to the test's criterion."""
    m = request.node.get_closest_marker("criterion")

    def add(text, criterion=None):
        _details[criterion if criterion is not None else m.args[0]].append(str(text))
    return add


def pytest_terminal_summary(terminalreporter):
    if not _outcomes and not _details:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n, title in CRITERIA.items():
        runs = _outcomes.get(n)
        status = "NOT RUN" if not runs else ("PASS" if all(runs) else "FAIL")
        tr.write_line(f"{status} criterion {n}: {title} ({sum(runs or [])}/{len(runs or [])} tests)")
        for d in _details.get(n, []):
            tr.write_line(f"    {d}")
