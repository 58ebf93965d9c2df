import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from fbz.mmspace import DiscreteSpace, build_fractal

settings.register_profile("fbz", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("fbz")


@pytest.fixture(scope="session")
def interval4():
    return build_fractal("interval", 4)


@pytest.fixture(scope="session")
def interval8():
    return build_fractal("interval", 8)


@pytest.fixture(scope="session")
def square4():
    return build_fractal("square", 4)


@pytest.fixture(scope="session")
def gasket3():
    return build_fractal("gasket", 3)


@pytest.fixture(scope="session")
def two_point():
    return DiscreteSpace.from_matrix(np.array([[0.0, 1.0], [1.0, 0.0]]), np.array([0.5, 0.5]))
