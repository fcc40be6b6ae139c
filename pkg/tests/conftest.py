import numpy as np
import pytest

from bdie.models.schemas import GeometryConfig
from bdie.services import laplace_core
from bdie.services.coefficient import make_coefficient
from bdie.services.verify import build_meshes, make_context


SMALL = GeometryConfig(n_polar=8, n_azimuth=16, n_r=4, volume_polar=6, volume_azimuth=12)
MEDIUM = GeometryConfig(n_polar=12, n_azimuth=24, n_r=6, volume_polar=9, volume_azimuth=18)
DEFAULT = GeometryConfig()


@pytest.fixture(autouse=True)
def single_worker():
    """Every test starts and ends with sequential assembly"""
    laplace_core.set_workers(1)
    yield
    laplace_core.set_workers(1)


@pytest.fixture(scope="session")
def small_geometry():
    return SMALL


@pytest.fixture(scope="session")
def medium_geometry():
    return MEDIUM


@pytest.fixture(scope="session")
def default_geometry():
    return DEFAULT


@pytest.fixture(scope="session")
def small_meshes():
    return build_meshes(SMALL)


@pytest.fixture(scope="session")
def default_boundary():
    return build_meshes(DEFAULT)[0]


@pytest.fixture(scope="session")
def unit_coefficient():
    return make_coefficient("const", {"c": 1.0})


@pytest.fixture(scope="session")
def exp_coefficient():
    return make_coefficient("exp_linear", {"k": 2.0})


@pytest.fixture(scope="session")
def small_unit_ctx(unit_coefficient):
    return make_context(unit_coefficient, SMALL)


@pytest.fixture(scope="session")
def small_exp_ctx(exp_coefficient):
    return make_context(exp_coefficient, SMALL)


@pytest.fixture(scope="session")
def default_unit_ctx(unit_coefficient):
    return make_context(unit_coefficient, DEFAULT)


@pytest.fixture(scope="session")
def default_exp_ctx(exp_coefficient):
    """Default resolution; boundary operators only, no volume matrices"""
    return make_context(exp_coefficient, DEFAULT)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
