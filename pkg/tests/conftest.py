import numpy as np
import pytest

from lpvfbs import DeltaGeometry, default_blocks
from lpvfbs.controller import MachineModel


@pytest.fixture(scope="session")
def geometry():
    return DeltaGeometry()


@pytest.fixture(scope="session")
def blocks():
    return default_blocks()


@pytest.fixture(scope="session")
def small_model(geometry, blocks):
    """Default plant truncated to a short window; enough for structural checks."""
    return MachineModel(geometry, blocks, 1e-3, truncation=120)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def interior_points(rng, n, radius=90.0, z=(0.0, 60.0)):
    r = radius * np.sqrt(rng.uniform(0, 1, n))
    th = rng.uniform(0, 2 * np.pi, n)
    return np.stack([r * np.cos(th), r * np.sin(th), rng.uniform(*z, n)], axis=1)


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    lines = mod.summary_lines() if mod is not None else []
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
