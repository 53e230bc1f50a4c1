import sys
import time

import pytest

from armformation.engine import simulate
from armformation.presets import paper_scenario
from armformation.scenario import bundled_scenario, parse_scenario


class Run:
    """A finished simulation together with its wall-clock time."""

    def __init__(self, scenario, workers=1):
        self.scenario = scenario
        start = time.perf_counter()
        self.log = simulate(scenario, workers=workers)
        self.seconds = time.perf_counter() - start
        self.csv = self.log.to_csv()


@pytest.fixture(scope="session")
def square_run():
    return Run(parse_scenario(bundled_scenario()))


@pytest.fixture(scope="session")
def displacement_run():
    return Run(parse_scenario(bundled_scenario("paper_sec5_displacement.scenario")))


@pytest.fixture(scope="session")
def fine_run():
    return Run(paper_scenario(dt=5e-4, log_stride=20))


@pytest.fixture(scope="session")
def no_model_run():
    return Run(paper_scenario(internal_models=False))


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(results, key=lambda k: int(k[1:])):
        ok, detail = results[key]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} {key}: {detail}")
