import numpy as np
import pytest

from guidancelab import make_schedule, quadrant_world, std_normal_world


@pytest.fixture(scope="session")
def schedule():
    return make_schedule("linear", T=1000, beta_start=1e-4, beta_end=0.02)


@pytest.fixture(scope="session")
def short_schedule():
    return make_schedule("linear", T=100, beta_start=1e-3, beta_end=0.05)


@pytest.fixture(scope="session")
def quadrant():
    return quadrant_world()


@pytest.fixture(scope="session")
def std_normal():
    return std_normal_world()


@pytest.fixture()
def rng():
    return np.random.default_rng(12345)
