import pytest

from kcip_lab.lattice import build_torus


@pytest.fixture(scope="session")
def lam31():
    return build_torus(3, 1)


@pytest.fixture(scope="session")
def lam32():
    return build_torus(3, 2)
