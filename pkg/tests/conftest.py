import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from ngkit.cell import CellConfig

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def cell20():
    return CellConfig(cell_id=1, bandwidth_mhz=20)


@pytest.fixture
def cell5():
    return CellConfig(cell_id=1, bandwidth_mhz=5)


ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
