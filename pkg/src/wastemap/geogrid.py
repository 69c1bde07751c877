"""Regular metric analysis grid over a raster footprint.

Tiles are axis-aligned squares in a projected working CRS whose grid lines
fall on absolute multiples of the tile size (after anchor snapping), so grids
from overlapping flights of the same area line up. Tile ids are (row, col)
with row 0 at the northern edge and col 0 at the western edge, row-major.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from wastemap.errors import ConfigError, DataError, GeometryError
from wastemap.geo import is_geographic, is_metric, transform_points, utm_epsg, utm_to_lonlat
from wastemap.raster import RasterDataset, RasterMeta

_SNAP_EPS = 1e-6


@dataclass(frozen=True)
class GridSpec:
    """Gridding parameters. tile_size_m defaults to the 5 m analysis unit."""

    tile_size_m: float = 5.0
    working_epsg: int | None = None
    origin: tuple[float, float] | None = None
    include_partials: bool = False
    min_valid_fraction: float = 0.5

    def __post_init__(self):
        if self.tile_size_m <= 0:
            raise ConfigError(f"tile_size_m must be positive, got {self.tile_size_m}")
        if not (0.0 <= self.min_valid_fraction <= 1.0):
            raise ConfigError("min_valid_fraction must lie in [0, 1]")


@dataclass
class TileRecord:
    """One grid cell: spatial bounds plus the enclosing source-pixel window."""

    tile_id: tuple[int, int]
    bounds: tuple[float, float, float, float]
    pixel_window: tuple[int, int, int, int]  # row_off, col_off, height, width
    valid_fraction: float = 1.0
    label: str | None = None
    prediction: str | None = None
    confidence: float | None = None


@dataclass
class Grid:
    """Ordered tile collection plus the header needed to reproduce it."""

    working_epsg: int
    tile_size_m: float
    origin_x: float
    origin_y_top: float
    n_rows: int
    n_cols: int
    include_partials: bool
    min_valid_fraction: float
    raster_path: str
    raster_epsg: int
    tiles: list[TileRecord] = field(default_factory=list)

    def __len__(self):
        return len(self.tiles)

    def __iter__(self):
        return iter(self.tiles)

    def __getitem__(self, idx):
        return self.tiles[idx]

    def bounds_of(self, row: int, col: int) -> tuple[float, float, float, float]:
        t = self.tile_size_m
        return (
            self.origin_x + col * t,
            self.origin_y_top - (row + 1) * t,
            self.origin_x + (col + 1) * t,
            self.origin_y_top - row * t,
        )

    def tile_id_of(self, bounds) -> tuple[int, int]:
        minx, _miny, _maxx, maxy = bounds
        col = round((minx - self.origin_x) / self.tile_size_m)
        row = round((self.origin_y_top - maxy) / self.tile_size_m)
        return (row, col)

    def analyzed(self) -> list[TileRecord]:
        """Tiles that count toward the contamination denominator."""
        return [t for t in self.tiles if t.valid_fraction >= self.min_valid_fraction]


def _snap(v: float, eps: float = _SNAP_EPS) -> float:
    r = round(v)
    return float(r) if abs(v - r) < eps else v


def choose_working_crs(meta: RasterMeta) -> int:
    """Metric rasters keep their CRS; geographic ones get the centroid's UTM zone."""
    if is_metric(meta.crs_epsg):
        return meta.crs_epsg
    if not is_geographic(meta.crs_epsg):
        raise GeometryError(f"cannot derive a metric working CRS from EPSG:{meta.crs_epsg}")
    minx, miny, maxx, maxy = meta.bounds
    if not all(map(math.isfinite, (minx, miny, maxx, maxy))) or minx == maxx or miny == maxy:
        raise GeometryError("raster centroid undefined (degenerate extent)")
    lon, lat = meta.centroid
    return utm_epsg(lon, lat)


def _footprint_in_working(meta: RasterMeta, working_epsg: int):
    """Footprint corner ring in the working CRS, plus a rectangle fast-path flag."""
    cols = np.array([0.0, meta.width_px, meta.width_px, 0.0])
    rows = np.array([0.0, 0.0, meta.height_px, meta.height_px])
    x, y = meta.transform.apply(cols, rows)
    rectangular = meta.transform.is_axis_aligned and working_epsg == meta.crs_epsg
    wx, wy = transform_points(x, y, meta.crs_epsg, working_epsg)
    return np.column_stack([wx, wy]), rectangular


def make_grid(meta: RasterMeta, spec: GridSpec | None = None) -> Grid:
    """Generate the tile grid for a raster footprint.

    With include_partials=False only tiles entirely inside the footprint are
    emitted (for reprojected, non-rectangular footprints the test is corner
    containment). Each tile carries the minimal source-pixel window covering
    its bounds.
    """
    spec = spec or GridSpec()
    working = spec.working_epsg or choose_working_crs(meta)
    if not is_metric(working):
        raise ConfigError(f"working CRS EPSG:{working} is not metric")

    ring, rectangular = _footprint_in_working(meta, working)
    minx, miny = ring.min(axis=0)
    maxx, maxy = ring.max(axis=0)
    t = spec.tile_size_m

    if spec.origin is not None:
        ox, oy = spec.origin
    else:
        ox = math.floor(_snap(minx / t)) * t
        oy = math.floor(_snap(miny / t)) * t
    oy_top = oy + math.ceil(_snap((maxy - oy) / t)) * t

    u0 = _snap((minx - ox) / t)
    u1 = _snap((maxx - ox) / t)
    v0 = _snap((oy_top - maxy) / t)
    v1 = _snap((oy_top - miny) / t)
    if spec.include_partials:
        col_lo, col_hi = math.floor(u0), math.ceil(u1)
        row_lo, row_hi = math.floor(v0), math.ceil(v1)
    else:
        col_lo, col_hi = math.ceil(u0), math.floor(u1)
        row_lo, row_hi = math.ceil(v0), math.floor(v1)
    n_cols = max(0, col_hi - col_lo)
    n_rows = max(0, row_hi - row_lo)

    grid = Grid(
        working_epsg=working,
        tile_size_m=t,
        origin_x=ox + col_lo * t,
        origin_y_top=oy_top - row_lo * t,
        n_rows=n_rows,
        n_cols=n_cols,
        include_partials=spec.include_partials,
        min_valid_fraction=spec.min_valid_fraction,
        raster_path=meta.path,
        raster_epsg=meta.crs_epsg,
    )
    if n_rows == 0 or n_cols == 0:
        return grid

    rows_idx, cols_idx = np.meshgrid(np.arange(n_rows), np.arange(n_cols), indexing="ij")
    rows_idx = rows_idx.ravel()
    cols_idx = cols_idx.ravel()
    tminx = grid.origin_x + cols_idx * t
    tmaxx = tminx + t
    tmaxy = grid.origin_y_top - rows_idx * t
    tminy = tmaxy - t

    if not rectangular:
        keep = _containment_filter(ring, tminx, tminy, tmaxx, tmaxy, spec.include_partials)
        rows_idx, cols_idx = rows_idx[keep], cols_idx[keep]
        tminx, tminy, tmaxx, tmaxy = tminx[keep], tminy[keep], tmaxx[keep], tmaxy[keep]

    win = _windows_for_bounds(meta, working, tminx, tminy, tmaxx, tmaxy)
    row_off, col_off, win_h, win_w = win

    tiles = []
    for i in range(rows_idx.size):
        tiles.append(
            TileRecord(
                tile_id=(int(rows_idx[i]), int(cols_idx[i])),
                bounds=(float(tminx[i]), float(tminy[i]), float(tmaxx[i]), float(tmaxy[i])),
                pixel_window=(int(row_off[i]), int(col_off[i]), int(win_h[i]), int(win_w[i])),
            )
        )
    grid.tiles = tiles
    return grid


def _containment_filter(ring, tminx, tminy, tmaxx, tmaxy, include_partials):
    """Corner-based footprint test for non-rectangular (reprojected) footprints."""
    import shapely

    poly = shapely.Polygon(ring)
    shapely.prepare(poly)
    xs = np.stack([tminx, tmaxx, tmaxx, tminx])
    ys = np.stack([tminy, tminy, tmaxy, tmaxy])
    inside = shapely.contains_xy(poly, xs.ravel(), ys.ravel()).reshape(4, -1)
    if include_partials:
        boxes = shapely.box(tminx, tminy, tmaxx, tmaxy)
        return shapely.intersects(poly, boxes)
    return inside.all(axis=0)


def _windows_for_bounds(meta: RasterMeta, working_epsg: int, tminx, tminy, tmaxx, tmaxy):
    """Minimal pixel windows covering tile bounds, clamped to the raster extent.

    A pixel belongs to the window iff its footprint overlaps the tile with
    positive area; edge-touching pixels are excluded (snap tolerance 1e-6 px).
    """
    if working_epsg == meta.crs_epsg:
        bminx, bminy, bmaxx, bmaxy = tminx, tminy, tmaxx, tmaxy
    else:
        xs = np.concatenate([tminx, tmaxx, tmaxx, tminx])
        ys = np.concatenate([tminy, tminy, tmaxy, tmaxy])
        rx, ry = transform_points(xs, ys, working_epsg, meta.crs_epsg)
        n = tminx.size
        rx = rx.reshape(4, n)
        ry = ry.reshape(4, n)
        bminx, bmaxx = rx.min(axis=0), rx.max(axis=0)
        bminy, bmaxy = ry.min(axis=0), ry.max(axis=0)

    tr = meta.transform
    if not tr.is_axis_aligned:
        raise GeometryError("rotated rasters are not supported")
    px = tr.a
    py = -tr.e
    c0 = np.floor(_snap_arr((bminx - tr.c) / px))
    c1 = np.ceil(_snap_arr((bmaxx - tr.c) / px))
    r0 = np.floor(_snap_arr((tr.f - bmaxy) / py))
    r1 = np.ceil(_snap_arr((tr.f - bminy) / py))
    c0 = np.clip(c0, 0, meta.width_px)
    c1 = np.clip(c1, 0, meta.width_px)
    r0 = np.clip(r0, 0, meta.height_px)
    r1 = np.clip(r1, 0, meta.height_px)
    return r0.astype(np.int64), c0.astype(np.int64), (r1 - r0).astype(np.int64), (c1 - c0).astype(np.int64)


def _snap_arr(v: np.ndarray, eps: float = _SNAP_EPS) -> np.ndarray:
    r = np.round(v)
    return np.where(np.abs(v - r) < eps, r, v)


def tile_to_window(tile: TileRecord, meta: RasterMeta, working_epsg: int) -> tuple[int, int, int, int]:
    """Pixel window covering one tile. Raises GeometryError for disjoint tiles."""
    minx, miny, maxx, maxy = tile.bounds
    r0, c0, h, w = (
        arr[0]
        for arr in _windows_for_bounds(
            meta,
            working_epsg,
            np.array([minx]),
            np.array([miny]),
            np.array([maxx]),
            np.array([maxy]),
        )
    )
    if h <= 0 or w <= 0:
        raise GeometryError(f"tile {tile.tile_id} does not intersect the raster extent")
    return int(r0), int(c0), int(h), int(w)


def compute_valid_fractions(grid: Grid, raster: RasterDataset) -> None:
    """Fill valid_fraction for every tile (fraction of non-nodata pixels).

    Without a nodata sentinel all tiles are fully valid. With one, windows are
    scanned strip by strip (one grid row at a time) using an integral image,
    so cost stays linear in raster size.
    """
    if raster.meta.nodata is None:
        for t in grid.tiles:
            t.valid_fraction = 1.0
        return

    by_row: dict[int, list[TileRecord]] = {}
    for t in grid.tiles:
        by_row.setdefault(t.tile_id[0], []).append(t)

    for _row, tiles in sorted(by_row.items()):
        r_lo = min(t.pixel_window[0] for t in tiles)
        r_hi = max(t.pixel_window[0] + t.pixel_window[2] for t in tiles)
        if r_hi <= r_lo:
            for t in tiles:
                t.valid_fraction = 0.0
            continue
        strip = raster.read_window(r_lo, 0, r_hi - r_lo, raster.meta.width_px)
        mask = ~np.all(strip == raster.meta.nodata, axis=-1)
        integral = np.zeros((mask.shape[0] + 1, mask.shape[1] + 1), dtype=np.int64)
        np.cumsum(np.cumsum(mask, axis=0), axis=1, out=integral[1:, 1:])
        for t in tiles:
            r0, c0, h, w = t.pixel_window
            if h <= 0 or w <= 0:
                t.valid_fraction = 0.0
                continue
            a, b = r0 - r_lo, r0 - r_lo + h
            count = integral[b, c0 + w] - integral[a, c0 + w] - integral[b, c0] + integral[a, c0]
            t.valid_fraction = float(count) / float(h * w)


# --- manifest I/O ---------------------------------------------------------

GRID_CSV_COLUMNS = [
    "row",
    "col",
    "minx",
    "miny",
    "maxx",
    "maxy",
    "row_off",
    "col_off",
    "height",
    "width",
    "valid_fraction",
]


def _meta_path(csv_path: str | Path) -> Path:
    p = Path(csv_path)
    return p.with_suffix(p.suffix + ".meta.json")


def write_grid_csv(grid: Grid, path: str | Path) -> str:
    """Write the tile manifest (CSV) plus its grid header sidecar (JSON)."""
    import csv as _csv

    path = Path(path)
    with open(path, "w", newline="") as f:
        w = _csv.writer(f)
        w.writerow(GRID_CSV_COLUMNS)
        for t in grid.tiles:
            w.writerow(
                [
                    t.tile_id[0],
                    t.tile_id[1],
                    repr(t.bounds[0]),
                    repr(t.bounds[1]),
                    repr(t.bounds[2]),
                    repr(t.bounds[3]),
                    t.pixel_window[0],
                    t.pixel_window[1],
                    t.pixel_window[2],
                    t.pixel_window[3],
                    repr(t.valid_fraction),
                ]
            )
    header = {
        "working_epsg": grid.working_epsg,
        "tile_size_m": grid.tile_size_m,
        "origin_x": grid.origin_x,
        "origin_y_top": grid.origin_y_top,
        "n_rows": grid.n_rows,
        "n_cols": grid.n_cols,
        "include_partials": grid.include_partials,
        "min_valid_fraction": grid.min_valid_fraction,
        "raster_path": grid.raster_path,
        "raster_epsg": grid.raster_epsg,
        "n_tiles": len(grid.tiles),
    }
    with open(_meta_path(path), "w") as f:
        json.dump(header, f, indent=2, sort_keys=True)
        f.write("\n")
    return str(path)


def read_grid_csv(path: str | Path) -> Grid:
    import csv as _csv

    meta_file = _meta_path(path)
    if not meta_file.is_file():
        raise DataError(f"grid manifest sidecar missing: {meta_file}")
    with open(meta_file) as f:
        header = json.load(f)
    grid = Grid(
        working_epsg=header["working_epsg"],
        tile_size_m=header["tile_size_m"],
        origin_x=header["origin_x"],
        origin_y_top=header["origin_y_top"],
        n_rows=header["n_rows"],
        n_cols=header["n_cols"],
        include_partials=header["include_partials"],
        min_valid_fraction=header["min_valid_fraction"],
        raster_path=header["raster_path"],
        raster_epsg=header["raster_epsg"],
    )
    with open(path, newline="") as f:
        reader = _csv.DictReader(f)
        missing = set(GRID_CSV_COLUMNS) - set(reader.fieldnames or [])
        if missing:
            raise DataError(f"grid manifest missing columns: {sorted(missing)}")
        for rec in reader:
            grid.tiles.append(
                TileRecord(
                    tile_id=(int(rec["row"]), int(rec["col"])),
                    bounds=(
                        float(rec["minx"]),
                        float(rec["miny"]),
                        float(rec["maxx"]),
                        float(rec["maxy"]),
                    ),
                    pixel_window=(
                        int(rec["row_off"]),
                        int(rec["col_off"]),
                        int(rec["height"]),
                        int(rec["width"]),
                    ),
                    valid_fraction=float(rec["valid_fraction"]),
                )
            )
    return grid


def grid_to_geojson(grid: Grid, path: str | Path) -> str:
    """GeoJSON FeatureCollection of tile polygons (WGS84, 7-decimal coords)."""
    feats = []
    for t in grid.tiles:
        minx, miny, maxx, maxy = t.bounds
        xs = np.array([minx, maxx, maxx, minx, minx])
        ys = np.array([miny, miny, maxy, maxy, miny])
        lon, lat = utm_to_lonlat(xs, ys, grid.working_epsg)
        coords = [[round(float(lo), 7), round(float(la), 7)] for lo, la in zip(lon, lat)]
        feats.append(
            {
                "type": "Feature",
                "geometry": {"type": "Polygon", "coordinates": [coords]},
                "properties": {
                    "tile_id": [t.tile_id[0], t.tile_id[1]],
                    "valid_fraction": t.valid_fraction,
                },
            }
        )
    doc = {"type": "FeatureCollection", "features": feats}
    with open(path, "w") as f:
        json.dump(doc, f, separators=(",", ":"), sort_keys=True)
        f.write("\n")
    return str(path)


def grid_spec_like(grid: Grid) -> GridSpec:
    """Spec that reproduces a loaded grid (modulo footprint-derived fields)."""
    return GridSpec(
        tile_size_m=grid.tile_size_m,
        working_epsg=grid.working_epsg,
        include_partials=grid.include_partials,
        min_valid_fraction=grid.min_valid_fraction,
    )


def regenerate_check(grid: Grid, meta: RasterMeta) -> bool:
    """True when regenerating from the raster reproduces the stored grid."""
    fresh = make_grid(meta, grid_spec_like(grid))
    if len(fresh) != len(grid):
        return False
    return all(
        a.tile_id == b.tile_id and a.bounds == b.bounds and a.pixel_window == b.pixel_window
        for a, b in zip(fresh.tiles, grid.tiles)
    )
