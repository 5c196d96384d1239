import numpy as np
import pytest

from semfoam.geometry import BoundingBox, build_delaunay


@pytest.fixture
def unit_box():
    return BoundingBox(np.zeros(3), np.ones(3))


def random_foam(n_sites, seed, box=None):
    """Random site set with its triangulation, safely inside the box."""
    if box is None:
        box = BoundingBox(np.zeros(3), np.ones(3))
    rng = np.random.default_rng(seed)
    span = box.hi - box.lo
    sites = box.lo + (0.02 + 0.96 * rng.random((n_sites, 3))) * span
    return sites, build_delaunay(sites, box), box
