import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from ecgraph.leadtrace import CalibrationConfig
from ecgraph.raster import BinaryRaster, Region, standard_layout

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def layout():
    return standard_layout()


@pytest.fixture(scope="session")
def cal():
    return CalibrationConfig()


def raster_from(rows):
    """BinaryRaster from a list of strings, '#' = ink."""
    bits = np.array([[ch == "#" for ch in r] for r in rows], dtype=bool)
    return BinaryRaster(bits, Region.full(bits.shape[1], bits.shape[0]))


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import LINES
    if LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in LINES:
            terminalreporter.write_line(line)
