"""GeoTIFF access: georeferencing tags, windowed pixel reads, fixture writing.

Built directly on tifffile. Uncompressed contiguous rasters (everything this
package writes) are windowed through a memory map, so a read touches only the
requested pixels. Compressed or tiled inputs fall back to a one-time full
decode that is then sliced; fine for orthomosaics that fit in memory, which is
the v1 contract.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import tifffile

from wastemap.errors import DataError, GeometryError
from wastemap.geo import Affine, EPSG_WGS84, is_geographic

TAG_MODEL_PIXEL_SCALE = 33550
TAG_MODEL_TIEPOINT = 33922
TAG_MODEL_TRANSFORMATION = 34264
TAG_GEO_KEY_DIRECTORY = 34735
TAG_GDAL_NODATA = 42113

GEOKEY_MODEL_TYPE = 1024
GEOKEY_RASTER_TYPE = 1025
GEOKEY_GEOGRAPHIC_TYPE = 2048
GEOKEY_PROJECTED_CS_TYPE = 3072

METERS_PER_DEGREE = 111320.0


@dataclass(frozen=True)
class RasterMeta:
    """Georeferencing and layout of one orthomosaic."""

    path: str
    width_px: int
    height_px: int
    transform: Affine
    crs_epsg: int
    gsd_m: float
    band_count: int
    dtype: str
    nodata: float | None = None

    def __post_init__(self):
        if self.width_px < 1 or self.height_px < 1:
            raise DataError(f"degenerate raster dimensions {self.width_px}x{self.height_px}")
        if self.gsd_m <= 0:
            raise DataError(f"non-positive ground sampling distance {self.gsd_m}")

    @property
    def bounds(self) -> tuple[float, float, float, float]:
        """(minx, miny, maxx, maxy) of the pixel footprint in the raster CRS."""
        xs, ys = [], []
        for col, row in ((0, 0), (self.width_px, 0), (0, self.height_px), (self.width_px, self.height_px)):
            x, y = self.transform.apply(col, row)
            xs.append(x)
            ys.append(y)
        return min(xs), min(ys), max(xs), max(ys)

    @property
    def centroid(self) -> tuple[float, float]:
        minx, miny, maxx, maxy = self.bounds
        return (minx + maxx) / 2.0, (miny + maxy) / 2.0


def _geokeys_to_epsg(directory) -> int:
    vals = list(directory)
    if len(vals) < 4:
        raise DataError("GeoKeyDirectory tag too short")
    n_keys = vals[3]
    keys = {}
    for k in range(n_keys):
        base = 4 + 4 * k
        if base + 3 >= len(vals):
            break
        key_id, tag_loc, _count, value = vals[base : base + 4]
        if tag_loc == 0:
            keys[key_id] = value
    if GEOKEY_PROJECTED_CS_TYPE in keys:
        return int(keys[GEOKEY_PROJECTED_CS_TYPE])
    if GEOKEY_GEOGRAPHIC_TYPE in keys:
        return int(keys[GEOKEY_GEOGRAPHIC_TYPE])
    raise DataError("GeoKeyDirectory carries no EPSG code")


def _transform_from_tags(tags) -> Affine:
    if TAG_MODEL_TRANSFORMATION in tags:
        m = list(tags[TAG_MODEL_TRANSFORMATION].value)
        return Affine(m[0], m[1], m[3], m[4], m[5], m[7])
    if TAG_MODEL_PIXEL_SCALE in tags and TAG_MODEL_TIEPOINT in tags:
        sx, sy = tags[TAG_MODEL_PIXEL_SCALE].value[:2]
        i, j, _k, x, y, _z = tags[TAG_MODEL_TIEPOINT].value[:6]
        return Affine(sx, 0.0, x - i * sx, 0.0, -sy, y + j * sy)
    raise DataError("raster lacks ModelPixelScale/ModelTiepoint georeferencing")


def _normalize_axes(array: np.ndarray, axes: str) -> np.ndarray:
    """Return pixels as (height, width, bands)."""
    if axes in ("YX", "IYX"):
        return array.reshape(array.shape[-2], array.shape[-1], 1)
    if axes == "YXS":
        return array
    if axes == "SYX":
        return np.moveaxis(array, 0, -1)
    raise DataError(f"unsupported TIFF axes layout {axes!r}")


class RasterDataset:
    """Open orthomosaic with windowed access to pixel blocks."""

    def __init__(self, path: str | Path):
        self.path = str(path)
        if not Path(path).is_file():
            raise DataError(f"raster not found: {path}")
        with tifffile.TiffFile(self.path) as tif:
            page = tif.pages[0]
            series = tif.series[0]
            self._axes = series.axes
            transform = _transform_from_tags(page.tags)
            if TAG_GEO_KEY_DIRECTORY not in page.tags:
                raise DataError(f"{path} carries no GeoKeyDirectory; not a GeoTIFF")
            epsg = _geokeys_to_epsg(page.tags[TAG_GEO_KEY_DIRECTORY].value)
            nodata = None
            if TAG_GDAL_NODATA in page.tags:
                try:
                    nodata = float(page.tags[TAG_GDAL_NODATA].value)
                except ValueError as exc:
                    raise DataError(f"unparseable nodata tag: {exc}") from exc
            height, width, bands = self._shape_from_axes(series.shape, self._axes)
            self._memmappable = page.is_memmappable and self._axes in ("YX", "YXS")
            self.meta = RasterMeta(
                path=self.path,
                width_px=width,
                height_px=height,
                transform=transform,
                crs_epsg=epsg,
                gsd_m=_gsd_from_transform(transform, epsg, height),
                band_count=bands,
                dtype=str(series.dtype),
                nodata=nodata,
            )
        self._pixels: np.ndarray | None = None

    @staticmethod
    def _shape_from_axes(shape, axes: str) -> tuple[int, int, int]:
        if axes == "YX":
            return shape[0], shape[1], 1
        if axes == "YXS":
            return shape[0], shape[1], shape[2]
        if axes == "SYX":
            return shape[1], shape[2], shape[0]
        raise DataError(f"unsupported TIFF axes layout {axes!r}")

    def _load(self) -> np.ndarray:
        if self._pixels is None:
            if self._memmappable:
                arr = tifffile.memmap(self.path, mode="r")
                if arr.ndim == 2:
                    arr = arr.reshape(arr.shape[0], arr.shape[1], 1)
                self._pixels = arr
            else:
                with tifffile.TiffFile(self.path) as tif:
                    self._pixels = _normalize_axes(tif.series[0].asarray(), self._axes)
        return self._pixels

    def read_window(self, row_off: int, col_off: int, height: int, width: int) -> np.ndarray:
        """Exact source pixels for a window, shape (height, width, bands). No resampling."""
        meta = self.meta
        if height < 1 or width < 1:
            raise GeometryError(f"empty window {height}x{width}")
        if row_off < 0 or col_off < 0 or row_off + height > meta.height_px or col_off + width > meta.width_px:
            raise GeometryError(
                f"window (row={row_off}, col={col_off}, h={height}, w={width}) "
                f"exceeds raster extent {meta.height_px}x{meta.width_px}"
            )
        block = self._load()[row_off : row_off + height, col_off : col_off + width]
        return np.ascontiguousarray(block)

    def valid_mask(self, block: np.ndarray) -> np.ndarray | None:
        """Boolean mask of non-nodata pixels, or None when the raster has no sentinel."""
        if self.meta.nodata is None:
            return None
        return ~np.all(block == self.meta.nodata, axis=-1)

    def close(self):
        self._pixels = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def _gsd_from_transform(transform: Affine, epsg: int, height_px: int) -> float:
    px = (abs(transform.a) + abs(transform.e)) / 2.0
    if is_geographic(epsg):
        # approximate meters per degree at the raster's central latitude
        _, lat_c = transform.apply(0, height_px / 2.0)
        return px * METERS_PER_DEGREE * max(math.cos(math.radians(lat_c)), 1e-6)
    return px


def geokey_directory(epsg: int) -> tuple[int, ...]:
    projected = not is_geographic(epsg)
    keys = [
        (GEOKEY_MODEL_TYPE, 0, 1, 1 if projected else 2),
        (GEOKEY_RASTER_TYPE, 0, 1, 1),
    ]
    if projected:
        keys.append((GEOKEY_PROJECTED_CS_TYPE, 0, 1, epsg))
    else:
        keys.append((GEOKEY_GEOGRAPHIC_TYPE, 0, 1, epsg))
    header = (1, 1, 0, len(keys))
    return header + tuple(v for key in keys for v in key)


def write_geotiff(
    path: str | Path,
    pixels: np.ndarray,
    transform: Affine,
    epsg: int = EPSG_WGS84,
    nodata: float | None = None,
) -> str:
    """Write an uncompressed, memmappable GeoTIFF.

    Accepts (H, W) or (H, W, C) arrays, uint8 or uint16. The affine must be
    north-up (no rotation terms): that is what the tiepoint+scale tag pair can
    express.
    """
    if not transform.is_axis_aligned:
        raise GeometryError("GeoTIFF writer supports only north-up transforms")
    if transform.e >= 0:
        raise GeometryError("expected negative row scale (north-up raster)")
    pixels = np.asarray(pixels)
    if pixels.ndim == 2:
        pixels = pixels[:, :, None]
    if pixels.dtype not in (np.uint8, np.uint16):
        raise DataError(f"unsupported raster dtype {pixels.dtype}")

    geokeys = geokey_directory(epsg)
    extratags = [
        (TAG_MODEL_PIXEL_SCALE, 12, 3, (transform.a, -transform.e, 0.0), False),
        (TAG_MODEL_TIEPOINT, 12, 6, (0.0, 0.0, 0.0, transform.c, transform.f, 0.0), False),
        (TAG_GEO_KEY_DIRECTORY, 3, len(geokeys), geokeys, False),
    ]
    if nodata is not None:
        text = str(int(nodata)) if float(nodata).is_integer() else repr(float(nodata))
        extratags.append((TAG_GDAL_NODATA, 2, None, text, False))

    tifffile.imwrite(
        str(path),
        pixels if pixels.shape[2] > 1 else pixels[:, :, 0],
        photometric="rgb" if pixels.shape[2] == 3 else "minisblack",
        planarconfig="contig" if pixels.shape[2] > 1 else None,
        extratags=extratags,
    )
    return str(path)
