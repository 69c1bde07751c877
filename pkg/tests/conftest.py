import sys
from pathlib import Path

import pytest
from hypothesis import settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("default", max_examples=50, deadline=None)
settings.load_profile("default")


@pytest.fixture(scope="session")
def small_fixture(tmp_path_factory):
    """10x10 grid, 13 planted tiles, 5 cm GSD; shared across tests."""
    from wastemap.synthbench import make_fixture, random_plan

    plan = random_plan(10, 10, 13, seed=7)
    out = tmp_path_factory.mktemp("fixture_small")
    paths = make_fixture(plan, out)
    return plan, paths


@pytest.fixture(scope="session")
def small_raster(small_fixture):
    from wastemap.raster import RasterDataset

    _plan, paths = small_fixture
    return RasterDataset(paths.raster)


@pytest.fixture(scope="session")
def small_grid(small_raster):
    from wastemap.geogrid import GridSpec, make_grid

    return make_grid(small_raster.meta, GridSpec())
