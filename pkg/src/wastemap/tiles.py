"""Tile pixel extraction and conversion to fixed-size classifier tensors.

extract_tile returns exact source pixels (no resampling); to_tensor resizes
to the classifier input size with bilinear interpolation and normalizes to
uint8. Batch extraction groups equally-shaped windows so the resize kernel
runs on whole batches.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from wastemap import kernels
from wastemap.errors import ConfigError, DataError, EmptyTileError, GeometryError
from wastemap.geogrid import Grid, TileRecord
from wastemap.raster import RasterDataset

TENSOR_SIZE = 128


@dataclass
class TileTensor:
    tile_id: tuple[int, int]
    data: np.ndarray  # (size, size, 3) uint8
    source_window: tuple[int, int, int, int]


@dataclass
class TensorBatch:
    tile_ids: list[tuple[int, int]]
    tensors: np.ndarray  # (B, size, size, 3) uint8
    windows: list[tuple[int, int, int, int]]

    def __len__(self):
        return len(self.tile_ids)

    def __iter__(self) -> Iterator[TileTensor]:
        for i, tid in enumerate(self.tile_ids):
            yield TileTensor(tid, self.tensors[i], self.windows[i])


def extract_tile(raster: RasterDataset, tile: TileRecord) -> tuple[np.ndarray, np.ndarray | None]:
    """Exact source pixels for one tile window plus its nodata mask (or None)."""
    r0, c0, h, w = tile.pixel_window
    if h <= 0 or w <= 0:
        raise GeometryError(f"tile {tile.tile_id} has an empty pixel window")
    block = raster.read_window(r0, c0, h, w)
    return block, raster.valid_mask(block)


def _normalize_block(block: np.ndarray, mask: np.ndarray | None) -> np.ndarray:
    """uint8 3-band block: band policy, bit-depth rescale, nodata fill."""
    if block.shape[2] == 1:
        block = np.repeat(block, 3, axis=2)
    elif block.shape[2] == 2:
        raise DataError("2-band rasters are not supported (need 1 or >=3 bands)")
    else:
        block = block[:, :, :3]

    if mask is not None and not mask.any():
        raise EmptyTileError("tile window contains no valid pixels")

    if block.dtype == np.uint8:
        out = block.copy() if mask is not None else block
    else:
        # min-max per channel over valid pixels, rounded half up
        valid = mask if mask is not None else np.ones(block.shape[:2], dtype=bool)
        out = np.zeros(block.shape, dtype=np.uint8)
        vals = block[valid].astype(np.float64)
        lo = vals.min(axis=0)
        hi = vals.max(axis=0)
        span = np.where(hi > lo, hi - lo, 1.0)
        scaled = np.floor((block.astype(np.float64) - lo) / span * 255.0 + 0.5)
        out[:] = np.clip(scaled, 0, 255).astype(np.uint8)
        out[~valid] = 0
        return out

    if mask is not None:
        out[~mask] = 0
    return out


def to_tensor(
    block: np.ndarray,
    mask: np.ndarray | None = None,
    tile_id: tuple[int, int] = (0, 0),
    source_window: tuple[int, int, int, int] = (0, 0, 0, 0),
    size: int = TENSOR_SIZE,
) -> TileTensor:
    """Convert one raw pixel block to a (size, size, 3) uint8 tensor."""
    norm = _normalize_block(np.asarray(block), mask)
    data = kernels.resize_bilinear_batch(norm[None], size, size)[0]
    return TileTensor(tile_id, data, source_window)


def extract_batch(
    raster: RasterDataset,
    tiles: Sequence[TileRecord],
    batch_size: int = 64,
    size: int = TENSOR_SIZE,
    skipped: list | None = None,
) -> Iterator[TensorBatch]:
    """Stream TensorBatch objects in tile order.

    Every batch holds exactly batch_size tensors except possibly the last.
    All-nodata tiles are skipped and appended to `skipped` when provided.
    """
    if batch_size < 1:
        raise ConfigError(f"batch_size must be >= 1, got {batch_size}")

    pend_ids: list = []
    pend_windows: list = []
    pend_arrays: list = []
    pend_count = 0

    def flush_full():
        nonlocal pend_ids, pend_windows, pend_arrays, pend_count
        while pend_count >= batch_size:
            stacked = pend_arrays[0] if len(pend_arrays) == 1 else np.concatenate(pend_arrays)
            head = TensorBatch(pend_ids[:batch_size], stacked[:batch_size], pend_windows[:batch_size])
            pend_ids = pend_ids[batch_size:]
            pend_windows = pend_windows[batch_size:]
            pend_arrays = [stacked[batch_size:]] if pend_count > batch_size else []
            pend_count -= batch_size
            yield head

    run_blocks: list[np.ndarray] = []
    run_tiles: list[TileRecord] = []
    run_shape: tuple[int, int] | None = None

    def resize_run():
        nonlocal run_blocks, run_tiles, run_shape, pend_count
        if not run_blocks:
            return
        batch = np.stack(run_blocks)
        out = kernels.resize_bilinear_batch(batch, size, size)
        pend_arrays.append(out)
        pend_ids.extend(t.tile_id for t in run_tiles)
        pend_windows.extend(t.pixel_window for t in run_tiles)
        pend_count += len(run_tiles)
        run_blocks = []
        run_tiles = []
        run_shape = None

    for tile in tiles:
        try:
            block, mask = extract_tile(raster, tile)
            norm = _normalize_block(block, mask)
        except EmptyTileError:
            if skipped is not None:
                skipped.append(tile.tile_id)
            continue
        except GeometryError as exc:
            raise GeometryError(f"tile {tile.tile_id}: {exc}") from exc
        shape = norm.shape[:2]
        if run_shape is not None and shape != run_shape:
            resize_run()
            yield from flush_full()
        run_blocks.append(norm)
        run_tiles.append(tile)
        run_shape = shape
        if len(run_blocks) >= batch_size:
            resize_run()
            yield from flush_full()

    resize_run()
    yield from flush_full()
    if pend_count:
        stacked = pend_arrays[0] if len(pend_arrays) == 1 else np.concatenate(pend_arrays)
        yield TensorBatch(pend_ids, stacked, pend_windows)


def dump_tiles_png(
    raster: RasterDataset,
    grid: Grid,
    region_id: str,
    out_dir: str | Path,
    size: int = TENSOR_SIZE,
    tiles: Sequence[TileRecord] | None = None,
) -> str:
    """Write per-tile PNGs named <region>_<row>_<col>.png plus a CSV index.

    This is the annotation/training interchange format: the trainer consumes
    these files together with the dataset manifest.
    """
    from PIL import Image

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    index_rows = []
    skipped: list = []
    chosen = list(tiles) if tiles is not None else grid.tiles
    for batch in extract_batch(raster, chosen, batch_size=256, size=size, skipped=skipped):
        for tt in batch:
            name = f"{region_id}_{tt.tile_id[0]}_{tt.tile_id[1]}.png"
            Image.fromarray(tt.data).save(out_dir / name)
            index_rows.append((name, region_id, tt.tile_id[0], tt.tile_id[1]))
    index_path = out_dir / "index.csv"
    with open(index_path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["filename", "region_id", "row", "col"])
        w.writerows(index_rows)
    return str(index_path)
