import numpy as np
import pytest

from auvtune.config import default_config
from auvtune.dynamics import HydroParams


@pytest.fixture(scope="session")
def cfg():
    return default_config()


@pytest.fixture(scope="session")
def hydro(cfg):
    return HydroParams.from_config(cfg.plant)


@pytest.fixture()
def rng():
    return np.random.default_rng(12345)
