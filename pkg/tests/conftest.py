import numpy as np
import pytest

from lmmpose.geom import Intrinsics


@pytest.fixture
def K():
    return Intrinsics(500.0, 500.0, 320.0, 240.0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import REPORT

    if REPORT:
        terminalreporter.section("acceptance criteria")
        for line in REPORT:
            terminalreporter.write_line(line)
