import numpy as np
import pytest

from gmsfv.fem import BoundaryConditions
from gmsfv.field import Channel, Inclusion, gen_channel_field
from gmsfv.mesh import CoarseGrid, FineGrid


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def bc_lr():
    return BoundaryConditions.left_right(1.0, 0.0)


@pytest.fixture
def small_grids():
    fg = FineGrid(20, 20)
    return fg, CoarseGrid(fg, 5, 5)


@pytest.fixture
def small_field(small_grids):
    fg, _ = small_grids
    geo = [Channel(0.42, 0.06, 0.25, 0.8), Inclusion(0.6, 0.7, 0.1), Inclusion(0.35, 0.25, 0.1)]
    return gen_channel_field(fg, 1.0, 1e4, geometry=geo)


def random_field(fg, rng, contrast=1e3):
    """Log-uniform cell values spanning ``contrast``."""
    return 10.0 ** rng.uniform(0.0, np.log10(contrast), fg.n_cells)
