import numpy as np
import pytest

from icps.config import ExperimentConfig
from icps.network import NetworkConfig
from icps.plant import PlantParams


@pytest.fixture
def net():
    return NetworkConfig()


@pytest.fixture
def plant():
    return PlantParams()


@pytest.fixture
def cfg():
    return ExperimentConfig()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    acc = __import__("sys").modules.get("test_acceptance")
    if acc is None or not acc.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(acc.RESULTS):
        terminalreporter.write_line(acc.line(n))
