import numpy as np
import pytest

from bestguess.valuedist import Dist1D, JointValuation


@pytest.fixture
def two_point():
    return Dist1D.discrete([(1.0, 0.5), (2.0, 0.5)])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def iid_two_point(two_point):
    return JointValuation.iid(two_point, 2, 1)


@pytest.fixture
def fixed_matrix():
    return JointValuation.from_table([[[3.0, 1.0], [2.0, 4.0]]], [1.0])


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
