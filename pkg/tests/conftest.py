import numpy as np
import pytest
from hypothesis import settings

from unfreeze.grid import build_grid

settings.register_profile("default", deadline=None, max_examples=40, derandomize=True)
settings.load_profile("default")


@pytest.fixture
def unit_interval():
    return build_grid((0.0, 1.0), 16)


@pytest.fixture
def unit_square():
    return build_grid((0.0, 1.0, 0.0, 1.0), 6)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
