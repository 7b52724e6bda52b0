import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from dopploc.channel import RadioConfig, make_pilots
from dopploc.geometry import Scenario

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

DIR_1 = np.array([1.0, 2.0]) / np.sqrt(5.0)
DIR_2 = np.array([2.0, 1.0]) / np.sqrt(5.0)

# acceptance lines collected during the run and echoed in the terminal summary
ACCEPTANCE_LINES = {}


def reference_scenario(speed=10.0, direction=DIR_1, **kw) -> Scenario:
    return Scenario(ue_position=[5.0, 2.0], ip_positions=[[-6.0, 8.0], [8.0, 6.0]],
                    velocity=speed * np.asarray(direction), **kw)


@pytest.fixture(scope="session")
def cfg():
    return RadioConfig()


@pytest.fixture(scope="session")
def pilots(cfg):
    return make_pilots(cfg, 0)


@pytest.fixture
def scen1():
    return reference_scenario(10.0, DIR_1)


@pytest.fixture
def scen2():
    return reference_scenario(10.0, DIR_2)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])
