import math

import numpy as np
import pytest

from denjoylab.blowup import build_ball_system

DEFAULT_THETA = (math.sqrt(2.0) - 1.0, math.sqrt(3.0) - 1.0)


@pytest.fixture(scope="session")
def default_system():
    return build_ball_system(DEFAULT_THETA, 2000)


@pytest.fixture(scope="session")
def small_system():
    return build_ball_system(DEFAULT_THETA, 200)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
