import numpy as np
import pytest

from qei.fock import build_truncation
from qei.modes import build_cylinder_catalog

TWO_PI = 2 * np.pi


@pytest.fixture(scope="session")
def cat8():
    return build_cylinder_catalog(TWO_PI, 1.0, 8)


@pytest.fixture(scope="session")
def cat256():
    return build_cylinder_catalog(TWO_PI, 1.0, 256)


@pytest.fixture(scope="session")
def trunc28(cat256):
    return build_truncation(cat256, 2, 8)


@pytest.fixture(scope="session")
def trunc1(cat8):
    return build_truncation(cat8, 1, 12)
