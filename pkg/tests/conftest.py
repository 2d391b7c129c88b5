import numpy as np
import pytest

from weakflow.geometry import LevelSetGeometry


@pytest.fixture(scope="session")
def pipe():
    return LevelSetGeometry("circular_pipe")


@pytest.fixture(scope="session")
def channel():
    return LevelSetGeometry("plane_channel")


@pytest.fixture(scope="session")
def gyroid():
    return LevelSetGeometry("gyroid")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
