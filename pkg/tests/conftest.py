import pytest

from bubbledecomp.atlas import build_atlas
from bubbledecomp.geometry import make_manifold


@pytest.fixture(scope="session")
def sphere3():
    return make_manifold("sphere", 3)


@pytest.fixture(scope="session")
def torus3():
    return make_manifold("torus", 3)


@pytest.fixture(scope="session")
def sphere_atlas(sphere3):
    return build_atlas(sphere3)


@pytest.fixture(scope="session")
def torus_atlas(torus3):
    return build_atlas(torus3, 1.0)
