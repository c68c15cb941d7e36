import numpy as np
import pytest

from pmpkit.dynamics import ControlSet, ControlSystemDef
from pmpkit.geometry import Euclidean


def linear_system(a=0.0, b=1.0, horizon=1.0, lower=-1.0, upper=1.0, name="linear"):
    """Scalar ``x' = a x + b u`` with ``u`` in ``[lower, upper]``."""
    m = Euclidean(1)
    return ControlSystemDef(
        m, lambda t, c, x, u: a * np.asarray(x, float) + b * np.asarray(u, float),
        lambda t, c, x, u: np.array([[a]]), ControlSet.box([lower], [upper]), horizon,
        control_affine=True, name=name)


@pytest.fixture
def plain():
    """``x' = u`` on ``[-1, 1]``."""
    return linear_system()


@pytest.fixture
def growth():
    """``x' = x`` (control ignored)."""
    return linear_system(a=1.0, b=0.0)


@pytest.fixture
def growth_input():
    """``x' = x + u``."""
    return linear_system(a=1.0, b=1.0)


ACCEPTANCE = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[ACCEPTANCE] = []


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture
def verdict(request):
    """Record and print one PASS/FAIL line per acceptance criterion."""

    def record(line):
        request.config.stash[ACCEPTANCE].append(line)
        print(line)

    return record
