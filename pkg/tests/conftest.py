import numpy as np
import pytest

from syncmrac.experiment import default_config
from syncmrac.model import BaselineGains, f16_short_period


@pytest.fixture(scope="session")
def f16():
    return f16_short_period()


@pytest.fixture(scope="session")
def table1():
    return default_config()


@pytest.fixture(scope="session")
def f16_baseline(f16):
    plant, _ = f16
    return BaselineGains.from_lqr(plant, np.diag([0.0, 0.0, 100.0]), 1.0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_hurwitz(rng, n):
    lam = -rng.uniform(0.1, 10.0, size=n)
    S = rng.normal(size=(n, n)) + n * np.eye(n)
    return S @ np.diag(lam) @ np.linalg.inv(S)


def random_psd(rng, n):
    L = rng.normal(size=(n, n))
    return L @ L.T


@pytest.fixture(scope="session")
def grid_run(table1):
    """The full Table-1 grid with four workers: ``(results, wall seconds, workers)``."""
    from syncmrac.acceptance import run_grid_timed
    workers = 4
    results, elapsed = run_grid_timed(table1, workers)
    return results, elapsed, workers


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import LINES
    if LINES:
        terminalreporter.section("acceptance criteria")
        for line in LINES:
            terminalreporter.write_line(line)
