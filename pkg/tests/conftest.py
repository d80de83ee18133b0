import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    'default', deadline=None, max_examples=40,
    suppress_health_check=[HealthCheck.too_slow])
settings.load_profile('default')


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope='session')
def duffing_small():
    """A few short Duffing trajectories under uniform random input."""
    from ckoopman import systems
    ode = systems.duffing()
    X0 = systems.random_initial_conditions(6, [(-2, 2), (-2, 2)], 3)
    return systems.generate_snapshots(
        ode, X0, systems.UniformRandomInput(-2, 2), 10, systems.SimConfig(0.01), 4)


_CRITERIA = {}


@pytest.fixture
def criterion():
    """``report(number, ok, detail)`` records one acceptance verdict."""
    def report(number, ok, detail):
        _CRITERIA[number] = (bool(ok), detail)
        return ok
    return report


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section('acceptance criteria')
    for number in sorted(_CRITERIA):
        ok, detail = _CRITERIA[number]
        terminalreporter.write_line(
            f'criterion {number:2d}: {"PASS" if ok else "FAIL"}  {detail}')
