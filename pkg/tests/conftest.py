from pathlib import Path

import pytest

from scalepool.harness.config import load_scenario
from scalepool.harness.simulation import Simulation

SCENARIOS = Path(__file__).resolve().parent.parent / "scenarios"

_criteria = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion number and title")


def pytest_runtest_logreport(report):
    marker = getattr(report, "criterion", None)
    if marker is None:
        return
    n, title = marker
    ok = report.passed if report.when == "call" else not report.failed
    prev = _criteria.get(n, (title, True))
    _criteria[n] = (title, prev[1] and ok and not report.skipped)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    mark = item.get_closest_marker("criterion")
    if mark is not None:
        outcome.get_result().criterion = tuple(mark.args)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_criteria):
        title, ok = _criteria[n]
        terminalreporter.write_line(f"criterion {n:>2} {'PASS' if ok else 'FAIL'}  {title}")


def scenario(name, **flags):
    return load_scenario(str(SCENARIOS / name), flags)


@pytest.fixture(scope="session")
def reference_sim():
    sim = Simulation(scenario("reference.json"))
    sim.keep_snapshots = True
    sim.result = sim.run()
    return sim
