import numpy as np
import pytest

from hyperod.dynamics import AffineTorusMap, StandardMap

CAT_A = [[2, 1], [1, 1]]
CAT_B = [1, 0]
GAMMA_CAT = 0.9624236501192069  # log((3 + sqrt(5)) / 2)


@pytest.fixture(scope="session")
def standard_map():
    return StandardMap()


@pytest.fixture(scope="session")
def cat_map():
    return AffineTorusMap(CAT_A, CAT_B)


@pytest.fixture(scope="session")
def cat_map_b0():
    return AffineTorusMap(CAT_A, [0, 0])


def random_points(map_, rng, count):
    """Random (k, point) pairs covering the fundamental domain."""
    out = []
    for _ in range(count):
        coords = np.array([rng.uniform(0.0, p) for p in map_.periods])
        k = rng.uniform(-1.0, 1.0)
        out.append((k, map_.point(coords)))
    return out
