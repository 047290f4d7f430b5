import numpy as np
import pytest

from hydrofit.core import Dataset, Trajectory
from hydrofit.simulator import ActuatorTruth, Protocol, generate

# pass/fail lines for the acceptance suite, printed at the end of the run
ACCEPTANCE_RESULTS = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is not None and rep.when == "call":
        ACCEPTANCE_RESULTS[marker.args[0]] = (rep.passed, marker.args[1])


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(ACCEPTANCE_RESULTS):
        passed, title = ACCEPTANCE_RESULTS[num]
        terminalreporter.write_line(f"criterion {num:2d} {'PASS' if passed else 'FAIL'}  {title}")


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")
    config.addinivalue_line("markers", "slow: long-running statistical experiment")


@pytest.fixture(scope="session")
def clean_ds():
    """Default protocol, reference truth, no noise."""
    return generate(ActuatorTruth(noise_sigma=0.0), Protocol())


@pytest.fixture(scope="session")
def noisy_ds():
    return generate(ActuatorTruth(noise_sigma=0.5), Protocol(seed=3))


@pytest.fixture(scope="session")
def small_ds():
    """Two flow rates, two cycles each: quick fits."""
    return generate(ActuatorTruth(noise_sigma=0.3), Protocol(flow_rates=(50.0, 100.0), cycles_per_rate=2, seed=1))


def ramp_trajectory(n=50, fs=25.0, slope=100.0, p=None, **kw):
    t = np.arange(n) / fs
    v = slope * t
    return Trajectory(t=t, v=v, p=np.zeros(n) if p is None else p, sample_rate_hz=fs, **kw)


def make_dataset(*trajs, **kw):
    return Dataset(trajectories=tuple(trajs), **kw)
