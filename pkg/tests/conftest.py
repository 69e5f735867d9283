import numpy as np
import pytest

from cotune.problems import RendezvousConfig, scalar_lqr_example

ACCEPTANCE_LINES = []


@pytest.fixture
def scalar_problem():
    return scalar_lqr_example()


@pytest.fixture(scope="session")
def rendezvous_cfg():
    return RendezvousConfig(seed=0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
