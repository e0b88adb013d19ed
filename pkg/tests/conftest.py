import numpy as np
import pytest

from corrfield.geometry import PinholeCamera, Pose
from corrfield.mesh import make_box, make_cylinder, make_house, make_icosphere


@pytest.fixture(scope="session")
def cam():
    return PinholeCamera(fx=450.0, fy=450.0, cx=160.0, cy=120.0, width=320, height=240)


@pytest.fixture(scope="session")
def cube100():
    return make_box((100.0, 100.0, 100.0))


@pytest.fixture(scope="session")
def house():
    return make_house()


@pytest.fixture(scope="session")
def icosphere60():
    return make_icosphere(60.0, 2)


@pytest.fixture(scope="session")
def cylinder():
    return make_cylinder(40.0, 100.0, 36)


@pytest.fixture
def rng():
    return np.random.Generator(np.random.PCG64(1234))


@pytest.fixture(scope="session")
def front_pose():
    return Pose(np.eye(3), np.array([0.0, 0.0, 1000.0]))
