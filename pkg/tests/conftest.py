import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from stdic.image import build_interpolant
from stdic.synth import make_speckle, speckle_array

settings.register_profile(
    "stdic", deadline=None, max_examples=40,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture])
settings.load_profile("stdic")


@pytest.fixture(scope="session")
def speckle():
    return make_speckle(96, 96, seed=3)


@pytest.fixture(scope="session")
def speckle_raw():
    return speckle_array(96, 96, seed=3)


@pytest.fixture(scope="session")
def ramp():
    yy, xx = np.mgrid[0:32, 0:40].astype(float)
    return build_interpolant(3.0 * xx + 2.0 * yy)


_ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance(capsys):
    """Record one PASS/FAIL line for the acceptance report."""
    def record(line):
        _ACCEPTANCE_LINES.append(line)
        with capsys.disabled():
            print("\n" + line)
    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
