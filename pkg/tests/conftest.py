import numpy as np
import pytest

from meshdenoise import primitives
from meshdenoise.mesh import TriangleMesh


@pytest.fixture
def cube():
    return primitives.cube()


@pytest.fixture
def box444():
    return primitives.box(4, 4, 4)


@pytest.fixture
def plane():
    return primitives.grid_plane(8, 8)


@pytest.fixture
def bumpy():
    return primitives.bumpy_plane(12, 12, seed=3)


@pytest.fixture
def single_triangle():
    return TriangleMesh([[0, 0, 0], [1, 0, 0], [0, 1, 0]], [[0, 1, 2]])


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniform random rotation via QR with sign fixing."""
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q *= np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q
