import sys

import numpy as np
import pytest

from quotient_diffusion.geometry import SO2Space, SO3Space
from quotient_diffusion.schedule import LinearOneSided

TRIANGLE = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [-1.0, -1.0, 0.0]])


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def so3():
    return SO3Space(5)


@pytest.fixture
def so2():
    return SO2Space()


@pytest.fixture
def schedule():
    return LinearOneSided()


def norm(a, axis=(-1, -2)):
    return np.sqrt(np.sum(np.asarray(a) ** 2, axis=axis))


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "LINES", None)
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(lines):
        terminalreporter.write_line(lines[k])
    passed = sum(line.startswith("[PASS]") for line in lines.values())
    terminalreporter.write_line(f"{passed}/{len(lines)} criteria passed")
