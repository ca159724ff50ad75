import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from shapecorr.shapes import bent_cylinder_pair, geodesic_sphere, grid, icosahedron, icosphere, torus
from shapecorr.spectral import Shape

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def ico():
    return icosahedron()


@pytest.fixture(scope="session")
def sphere2():
    return icosphere(2)


@pytest.fixture(scope="session")
def small_torus():
    return torus(16, 8)


@pytest.fixture(scope="session")
def grid5():
    return grid(5, 5)


@pytest.fixture(scope="session")
def sphere_shape():
    return Shape.from_mesh(geodesic_sphere(6), 20)


@pytest.fixture(scope="session")
def cylinder_pair():
    src, tgt, gt = bent_cylinder_pair()
    return Shape.from_mesh(src, 30), Shape.from_mesh(tgt, 30), gt


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
