import numpy as np
import pytest

from zapfield.p2i import ArchConfig
from zapfield.sim_core import SimConfig


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run slow tests")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def small_sim():
    return SimConfig(n_cells=30, steps=200)


@pytest.fixture
def linear_arch():
    # no hidden layer: the output bias alone sets the field
    return ArchConfig(grid_n=2, hidden_dims=())


def inward_genome(arch: ArchConfig, magnitude: float = 50.0) -> np.ndarray:
    """
    Genome of a hidden-layer-free controller whose field points every node
    at the arena center, whatever the prompt.
    """

    n = arch.grid_n
    c = (n - 1) / 2.0
    vectors = np.zeros((n, n, 2))
    for i in range(n):
        for j in range(n):
            d = np.array([c - i, c - j])
            norm = np.linalg.norm(d)
            if norm > 0:
                vectors[i, j] = magnitude * d / norm

    weights = np.zeros(arch.input_dim * arch.output_dim)
    return np.concatenate([weights, vectors.ravel()])


@pytest.fixture
def inward(linear_arch):
    return inward_genome(linear_arch)
