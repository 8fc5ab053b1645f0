import pytest

from rosalab.resources.geometry import default_geometry


@pytest.fixture
def geo():
    return default_geometry()


@pytest.fixture
def crosswalk(geo):
    return geo.zone(0)


@pytest.fixture
def entry(geo):
    return geo.zone(3)
