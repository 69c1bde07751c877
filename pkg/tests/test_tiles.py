import numpy as np
import pytest

from oracles import bilinear_reference
from wastemap.errors import ConfigError, DataError, EmptyTileError, GeometryError
from wastemap.geo import Affine
from wastemap.geogrid import GridSpec, TileRecord, make_grid
from wastemap.raster import RasterDataset, write_geotiff
from wastemap.tiles import extract_batch, extract_tile, to_tensor


def _raster(tmp_path, pixels, nodata=None, name="r.tif", px=0.05):
    path = tmp_path / name
    write_geotiff(path, pixels, Affine.north_up(500000.0, 9300000.0, px), epsg=32736, nodata=nodata)
    return RasterDataset(path)


def _tile(r0, c0, h, w, tid=(0, 0)):
    return TileRecord(tile_id=tid, bounds=(0, 0, 5, 5), pixel_window=(r0, c0, h, w))


def test_extract_constant_block(tmp_path):
    ds = _raster(tmp_path, np.full((200, 200, 3), 42, dtype=np.uint8))
    block, mask = extract_tile(ds, _tile(0, 0, 100, 100))
    assert block.shape == (100, 100, 3)
    assert np.all(block == 42)
    assert mask is None


def test_extract_nodata_hole_mask(tmp_path):
    pixels = np.full((100, 100, 3), 80, dtype=np.uint8)
    pixels[10:20, 30:40] = 0
    ds = _raster(tmp_path, pixels, nodata=0)
    block, mask = extract_tile(ds, _tile(0, 0, 100, 100))
    expected = np.ones((100, 100), dtype=bool)
    expected[10:20, 30:40] = False
    assert np.array_equal(mask, expected)


def test_extract_out_of_extent(tmp_path):
    ds = _raster(tmp_path, np.zeros((50, 50, 3), dtype=np.uint8))
    with pytest.raises(GeometryError):
        extract_tile(ds, _tile(0, 0, 100, 100))


def test_to_tensor_identity_128():
    rng = np.random.default_rng(0)
    block = rng.integers(0, 256, (128, 128, 3), dtype=np.uint8)
    tt = to_tensor(block)
    assert np.array_equal(tt.data, block)


def test_to_tensor_constant_resize():
    block = np.full((256, 256, 3), 77, dtype=np.uint8)
    tt = to_tensor(block)
    assert tt.data.shape == (128, 128, 3)
    assert np.all(tt.data == 77)


def test_to_tensor_ramp_monotone_vs_oracle():
    ramp = np.tile(np.arange(100, dtype=np.uint8).reshape(1, 100, 1), (100, 1, 3))
    tt = to_tensor(ramp)
    means = tt.data.astype(float).mean(axis=(0, 2))
    assert np.all(np.diff(means) >= 0)
    ref = bilinear_reference(ramp, 128, 128)
    assert np.abs(tt.data.astype(int) - ref.astype(int)).max() <= 1


def test_to_tensor_uint16_minmax():
    block = np.zeros((64, 64, 3), dtype=np.uint16)
    block[:, :, 0] = 1000
    block[0, 0, 0] = 5000
    block[:, :, 1] = 300
    block[:, :, 2] = 300
    tt = to_tensor(block)
    # channel 0 spans 1000..5000 -> min maps to 0, max to 255
    assert tt.data[:, :, 0].max() == 255
    assert tt.data[1:, :, 0].min() == 0
    # constant channels collapse to 0
    assert np.all(tt.data[:, :, 1] == 0)


def test_to_tensor_single_band_replication():
    block = np.arange(64, dtype=np.uint8).reshape(8, 8, 1)
    tt = to_tensor(block, size=8)
    assert tt.data.shape == (8, 8, 3)
    assert np.array_equal(tt.data[:, :, 0], tt.data[:, :, 1])
    assert np.array_equal(tt.data[:, :, 0], tt.data[:, :, 2])


def test_to_tensor_two_band_rejected():
    with pytest.raises(DataError):
        to_tensor(np.zeros((8, 8, 2), dtype=np.uint8))


def test_to_tensor_all_nodata():
    block = np.zeros((8, 8, 3), dtype=np.uint8)
    mask = np.zeros((8, 8), dtype=bool)
    with pytest.raises(EmptyTileError):
        to_tensor(block, mask)


def test_to_tensor_nodata_filled_before_resize(tmp_path):
    block = np.full((10, 10, 3), 200, dtype=np.uint8)
    mask = np.ones((10, 10), dtype=bool)
    mask[:, 5:] = False
    tt = to_tensor(block, mask, size=10)
    # invalid half must be exactly 0 before any resize; identity size keeps it
    assert np.all(tt.data[:, 5:] == 0)
    assert np.all(tt.data[:, :5] == 200)


def test_extract_batch_sizes(tmp_path, small_raster, small_grid):
    batches = list(extract_batch(small_raster, small_grid.tiles[:10], batch_size=4))
    assert [len(b) for b in batches] == [4, 4, 2]
    order = [tid for b in batches for tid in b.tile_ids]
    assert order == [t.tile_id for t in small_grid.tiles[:10]]


def test_extract_batch_skips_all_nodata(tmp_path):
    pixels = np.full((300, 100, 3), 70, dtype=np.uint8)
    pixels[100:200] = 0  # middle tile fully nodata
    ds = _raster(tmp_path, pixels, nodata=0)
    grid = make_grid(ds.meta, GridSpec())
    assert len(grid) == 3
    skipped = []
    batches = list(extract_batch(ds, grid.tiles, batch_size=8, skipped=skipped))
    tensors = [tid for b in batches for tid in b.tile_ids]
    assert len(tensors) == 2
    assert skipped == [(1, 0)]


def test_extract_batch_zero_batch_size(small_raster, small_grid):
    with pytest.raises(ConfigError):
        list(extract_batch(small_raster, small_grid.tiles, batch_size=0))


def test_extract_batch_deterministic_across_batch_size(small_raster, small_grid):
    def collect(bs):
        out = {}
        for b in extract_batch(small_raster, small_grid.tiles, batch_size=bs):
            for tt in b:
                out[tt.tile_id] = tt.data.copy()
        return out

    a = collect(1)
    b = collect(64)
    assert a.keys() == b.keys()
    for k in a:
        assert np.array_equal(a[k], b[k])


def test_extract_batch_mixed_window_shapes(tmp_path):
    # partial tiles produce a different window shape; batches stay exact
    pixels = np.full((100, 230, 3), 50, dtype=np.uint8)
    ds = _raster(tmp_path, pixels)
    grid = make_grid(ds.meta, GridSpec(include_partials=True))
    assert len(grid) == 3  # windows 100x100, 100x100, 100x30
    batches = list(extract_batch(ds, grid.tiles, batch_size=2))
    assert [len(b) for b in batches] == [2, 1]
    for b in batches:
        assert b.tensors.shape[1:] == (128, 128, 3)


def test_dump_tiles_png(tmp_path, small_raster, small_grid, small_fixture):
    from wastemap.tiles import dump_tiles_png

    plan, _paths = small_fixture
    out = tmp_path / "png"
    index = dump_tiles_png(small_raster, small_grid, "fixture", out, tiles=small_grid.tiles[:6])
    files = sorted(p.name for p in out.glob("*.png"))
    assert len(files) == 6
    assert files[0].startswith("fixture_0_")
    import csv

    with open(index) as f:
        rows = list(csv.DictReader(f))
    assert len(rows) == 6
    assert rows[0]["region_id"] == "fixture"
