import numpy as np
import pytest

from entropic_lab.model import InteractionU, InterfaceModel, LatticeBox, PotentialV

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def quad():
    return InteractionU("quadratic")


@pytest.fixture
def linear():
    return PotentialV("linear")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def make_model(d, N, lam=0.0, ups=0.0, u=None, v=None, extents=None):
    return InterfaceModel(LatticeBox(d, N, extents), u or InteractionU(), v or PotentialV(), lam, ups)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
