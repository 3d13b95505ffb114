import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from voxpursuit import mapgen
from voxpursuit.world import VoxelGrid


@pytest.fixture(scope="session")
def canonical_map():
    return mapgen.canonical_map()


@pytest.fixture(scope="session")
def small_city():
    """A compact cluttered map for fast integration tests."""
    return mapgen.generate(mapgen.MapSpec(
        dims=(26, 26, 9), target_density=0.16, seed=7))


@pytest.fixture()
def empty_grid():
    return VoxelGrid.empty((20, 20, 6), 6.0)


def random_grid(rng: np.random.Generator, dims=(12, 12, 12), density=0.2) -> VoxelGrid:
    nx, ny, nz = dims
    cells = (rng.random(nx * ny * nz) < density).astype(np.uint8)
    return VoxelGrid(dims, 6.0, cells)
