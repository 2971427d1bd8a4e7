import numpy as np
import pytest

from cgmsfem.fields import PermeabilityEnsemble
from cgmsfem.grid import build_grids


@pytest.fixture
def small_grids():
    return build_grids(40, 40, 4, 4)


@pytest.fixture
def tiny_grids():
    return build_grids(8, 8, 2, 2)


def constant_ensemble(grid, value=1.0, M=1):
    vals = np.full((M, grid.n_cells), float(value))
    return PermeabilityEnsemble.with_uniform_weights(grid, vals)


def random_positive_ensemble(grid, M, seed=0, low=0.5, high=2.0):
    rng = np.random.default_rng(seed)
    vals = np.exp(rng.uniform(np.log(low), np.log(high), size=(M, grid.n_cells)))
    return PermeabilityEnsemble.with_uniform_weights(grid, vals)
