import numpy as np
import pytest

from kinshell.grid import DistributionField, PhaseGrid, SpatialGrid, build_velocity_grid


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


@pytest.fixture
def small_grid():
    """1-D box, 16 cells, 6 shells x 16 angles: the workhorse for unit tests."""
    spatial = SpatialGrid(1, (1.0,), (16,))
    velocity = build_velocity_grid(6, 16, 1.0)
    return PhaseGrid(spatial, velocity)


@pytest.fixture
def grid_2d():
    spatial = SpatialGrid(2, (1.0, 2.0), (8, 6))
    velocity = build_velocity_grid(3, 8, 1.0)
    return PhaseGrid(spatial, velocity)


def random_field(grid, rng, scale=1.0, time_tag=0.0):
    return DistributionField(grid, scale * rng.random(grid.shape), time_tag)


@pytest.fixture
def make_field(rng):
    def _make(grid, scale=1.0):
        return random_field(grid, rng, scale)

    return _make
