import numpy as np
import pytest

from selectcf.core import GenConfig
from selectcf.synthgen import generate_study


@pytest.fixture(scope="session")
def small_config():
    return GenConfig(L=6, n=200, d=8, k_x=4, k_z=4, rho=0.25, tau=0.5, seed=11)


@pytest.fixture(scope="session")
def small_study(small_config):
    return generate_study(small_config)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)
