import numpy as np
import pytest

from qftlab import plane


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def unit_bump_2d():
    return plane.PlaneTestFunction.bump(2, 1.0, [0.0, 0.0], 1.0)


@pytest.fixture(scope="session")
def unit_bump_1d():
    return plane.PlaneTestFunction.bump(1, 1.0, [0.0], 1.0)


def pytest_terminal_summary(terminalreporter):
    import sys

    lines = []
    for name, mod in list(sys.modules.items()):
        if name.endswith("test_acceptance"):
            lines = getattr(mod, "ACCEPTANCE_RESULTS", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
