"""Socio-spatial indicator aggregation and rank correlation against scores.

Zonal statistics use the cell-center-in-polygon rule (a raster cell belongs
to a region iff its center falls inside the region polygon), nodata cells
excluded. Rank correlation is Spearman's rho: Pearson correlation of
average-ranked data, so ties are handled.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import shapely

from wastemap.errors import ConfigError, DataError
from wastemap.evalsuite import average_ranks
from wastemap.raster import RasterDataset
from wastemap.scoring import RegionSummary

KNOWN_LAYERS = {
    # canonical aggregation per indicator: counts sum, indices average
    "shdi": "mean",
    "infrastructure_deficit": "mean",
    "population_density": "sum",
}


@dataclass
class IndicatorLayer:
    """One indicator: either a raster or a region-keyed value table."""

    name: str
    aggregation: str  # "mean" | "sum"
    raster: RasterDataset | None = None
    table: dict | None = None
    units: str = ""

    def __post_init__(self):
        if self.aggregation not in ("mean", "sum"):
            raise ConfigError(f"aggregation must be mean or sum, got {self.aggregation!r}")
        if (self.raster is None) == (self.table is None):
            raise ConfigError(f"layer {self.name}: provide exactly one of raster or table")


def layer_from_path(name: str, path: str | Path, aggregation: str | None = None) -> IndicatorLayer:
    agg = aggregation or KNOWN_LAYERS.get(name, "mean")
    path = Path(path)
    if path.suffix.lower() in (".tif", ".tiff"):
        return IndicatorLayer(name=name, aggregation=agg, raster=RasterDataset(path))
    table = {}
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        if not reader.fieldnames or "region_id" not in reader.fieldnames:
            raise DataError(f"{path}: indicator table needs a region_id column")
        value_col = next((c for c in reader.fieldnames if c != "region_id"), None)
        if value_col is None:
            raise DataError(f"{path}: indicator table needs a value column")
        for rec in reader:
            table[rec["region_id"]] = float(rec[value_col])
    return IndicatorLayer(name=name, aggregation=agg, table=table)


def load_regions_geojson(path: str | Path) -> dict:
    """region_id -> shapely polygon from a FeatureCollection."""
    with open(path) as f:
        doc = json.load(f)
    regions = {}
    for feat in doc.get("features", []):
        props = feat.get("properties") or {}
        rid = props.get("region_id")
        if rid is None:
            raise DataError("region feature lacks a region_id property")
        geom = shapely.geometry.shape(feat["geometry"])
        regions[str(rid)] = geom
    if not regions:
        raise DataError(f"{path}: no region features found")
    return regions


def zonal_aggregate(raster: RasterDataset, polygon, aggregation: str = "mean") -> float:
    """Aggregate raster band 1 over the cells whose centers fall in the polygon."""
    meta = raster.meta
    tr = meta.transform
    minx, miny, maxx, maxy = polygon.bounds
    c0f, r1f = tr.invert(minx, miny)
    c1f, r0f = tr.invert(maxx, maxy)
    c0 = max(0, int(np.floor(min(c0f, c1f))))
    c1 = min(meta.width_px, int(np.ceil(max(c0f, c1f))))
    r0 = max(0, int(np.floor(min(r0f, r1f))))
    r1 = min(meta.height_px, int(np.ceil(max(r0f, r1f))))
    if c1 <= c0 or r1 <= r0:
        raise DataError("region polygon does not overlap the indicator raster")

    block = raster.read_window(r0, c0, r1 - r0, c1 - c0)[:, :, 0].astype(np.float64)
    cols, rows = np.meshgrid(np.arange(c0, c1) + 0.5, np.arange(r0, r1) + 0.5)
    xs, ys = tr.apply(cols.ravel(), rows.ravel())
    inside = shapely.contains_xy(polygon, xs, ys).reshape(block.shape)
    if meta.nodata is not None:
        inside &= block != meta.nodata
    if not inside.any():
        raise DataError("no raster cell centers fall inside the region polygon")
    vals = block[inside]
    return float(vals.sum() if aggregation == "sum" else vals.mean())


def layer_values(
    layer: IndicatorLayer, region_ids: list[str], regions: dict | None = None
) -> dict:
    """region_id -> scalar for the requested regions; missing regions omitted."""
    out = {}
    if layer.table is not None:
        for rid in region_ids:
            if rid in layer.table:
                out[rid] = float(layer.table[rid])
        return out
    if regions is None:
        raise ConfigError(f"layer {layer.name} is a raster; region polygons required")
    for rid in region_ids:
        poly = regions.get(rid)
        if poly is None:
            continue
        out[rid] = zonal_aggregate(layer.raster, poly, layer.aggregation)
    return out


def spearman(x, y) -> float:
    """Spearman's rho: Pearson correlation of average ranks."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.size != y.size:
        raise DataError(f"length mismatch: {x.size} vs {y.size}")
    if x.size < 3:
        raise DataError(f"need at least 3 paired values, got {x.size}")
    rx = average_ranks(x)
    ry = average_ranks(y)
    rx = rx - rx.mean()
    ry = ry - ry.mean()
    denom = np.sqrt(np.dot(rx, rx) * np.dot(ry, ry))
    if denom == 0:
        raise DataError("rank variance is zero; correlation undefined")
    return float(np.dot(rx, ry) / denom)


@dataclass
class CorrelationResult:
    pair: str
    rho: float
    n: int
    excluded_regions: list[str] = field(default_factory=list)


@dataclass
class BivariateReport:
    results: list[CorrelationResult]
    region_ids: list[str]
    missing: dict  # layer name -> region ids without a value
    scatter: dict  # pair -> list of (region_id, x, y)


def bivariate_report(
    summaries: list[RegionSummary],
    layers: list[IndicatorLayer],
    regions: dict | None = None,
    exclude: list[str] | None = None,
) -> BivariateReport:
    """rho of score vs every layer, plus every layer-layer cross pair."""
    exclude = sorted(set(exclude or []))
    scores = {
        s.region_id: s.oddmswc for s in summaries if s.region_id not in exclude
    }
    region_ids = sorted(scores)
    values = {"oddmswc": scores}
    missing = {}
    for layer in layers:
        vals = layer_values(layer, region_ids, regions)
        lacking = [r for r in region_ids if r not in vals]
        if lacking:
            missing[layer.name] = lacking
        values[layer.name] = vals

    names = ["oddmswc"] + [l.name for l in layers]
    results = []
    scatter = {}
    for i, a in enumerate(names):
        for b in names[i + 1 :]:
            shared = [r for r in region_ids if r in values[a] and r in values[b]]
            if len(shared) < 3:
                raise DataError(f"pair {a} vs {b}: fewer than 3 regions with both values")
            xa = [values[a][r] for r in shared]
            yb = [values[b][r] for r in shared]
            pair = f"{a}_vs_{b}"
            results.append(
                CorrelationResult(
                    pair=pair, rho=spearman(xa, yb), n=len(shared), excluded_regions=exclude
                )
            )
            scatter[pair] = list(zip(shared, xa, yb))
    return BivariateReport(results=results, region_ids=region_ids, missing=missing, scatter=scatter)


def sensitivity_exclude(
    summaries: list[RegionSummary],
    layers: list[IndicatorLayer],
    exclude: list[str],
    regions: dict | None = None,
) -> BivariateReport:
    """Same analysis on the region set minus `exclude` (outlier sensitivity)."""
    remaining = [s for s in summaries if s.region_id not in set(exclude)]
    if len(remaining) < 3:
        raise DataError(
            f"only {len(remaining)} regions remain after exclusion; need at least 3"
        )
    return bivariate_report(remaining, layers, regions=regions, exclude=exclude)


def write_correlation_report(report: BivariateReport, path: str | Path) -> str:
    doc = {
        "n_regions": len(report.region_ids),
        "region_ids": report.region_ids,
        "missing": report.missing,
        "correlations": [
            {
                "pair": r.pair,
                "rho": r.rho,
                "n": r.n,
                "excluded_regions": r.excluded_regions,
            }
            for r in report.results
        ],
    }
    with open(path, "w") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
        f.write("\n")
    return str(path)


def write_scatter_csvs(report: BivariateReport, out_dir: str | Path) -> list[str]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for pair, rows in sorted(report.scatter.items()):
        p = out_dir / f"scatter_{pair}.csv"
        a, b = pair.split("_vs_")
        with open(p, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["region_id", a, b])
            for rid, x, y in rows:
                w.writerow([rid, repr(float(x)), repr(float(y))])
        paths.append(str(p))
    return paths
