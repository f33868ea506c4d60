import numpy as np
import pytest

from stsreach import model
from stsreach.lqr import design
from stsreach.planning import build_reference
from stsreach.scenario import Scenario, desk_scenario

ACCEPTANCE_LINES = {}


def record_criterion(number, passed, detail):
    """Store and print one acceptance line (also repeated in the terminal summary)."""
    line = f"CRITERION {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20240611)


def random_params(rng, n):
    """Uniform draws from the parameter box."""
    return model.PARAM_LOWER + rng.random((n, 12)) * (model.PARAM_UPPER - model.PARAM_LOWER)


@pytest.fixture(scope="session")
def nominal_setup():
    """Reference, gains and closed loop of the default 100 Hz scenario."""
    sc = Scenario()
    ref = build_reference(sc)
    sched, ric, gains, cl = design(ref, np.array(sc.p_nominal), sc.weights)
    return dict(scenario=sc, ref=ref, sched=sched, ric=ric, gains=gains, cl=cl)


@pytest.fixture(scope="session")
def desk_setup():
    sc = desk_scenario()
    ref = build_reference(sc)
    sched, ric, gains, cl = design(ref, np.array(sc.p_nominal), sc.weights)
    return dict(scenario=sc, ref=ref, sched=sched, ric=ric, gains=gains, cl=cl)
