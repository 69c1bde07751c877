"""Regional contamination scoring and map export.

The region score is the percentage of analyzed tiles classified as waste:
100 * n_waste / n_tiles_analyzed. Skipped and invalid tiles never enter the
denominator. Regions rank by descending score with lexicographic region_id
as the deterministic tiebreak.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from wastemap.errors import DataError, JoinError
from wastemap.geogrid import Grid
from wastemap.geo import utm_to_lonlat
from wastemap.infer import Prediction


@dataclass
class RegionSummary:
    region_id: str
    n_tiles_analyzed: int
    n_waste: int
    oddmswc: float
    rank: int | None = None


def oddmswc(predictions: Sequence[Prediction], region_id: str | None = None) -> RegionSummary:
    """Score one region from its non-skipped tile predictions."""
    preds = list(predictions)
    if not preds:
        raise DataError("cannot score a region with zero analyzed tiles")
    regions = {p.region_id for p in preds if p.region_id}
    if region_id is None:
        if len(regions) > 1:
            raise DataError(f"predictions span multiple regions: {sorted(regions)}")
        region_id = next(iter(regions)) if regions else ""
    n = len(preds)
    n_waste = sum(1 for p in preds if p.predicted_class == "waste")
    return RegionSummary(
        region_id=region_id,
        n_tiles_analyzed=n,
        n_waste=n_waste,
        oddmswc=100.0 * n_waste / n,
    )


def summaries_from_predictions(predictions: Sequence[Prediction]) -> list[RegionSummary]:
    by_region: dict = {}
    for p in predictions:
        by_region.setdefault(p.region_id, []).append(p)
    return [oddmswc(v, region_id=k) for k, v in sorted(by_region.items())]


def rank_regions(summaries: Sequence[RegionSummary]) -> list[RegionSummary]:
    """Descending by score; ties break by region_id so ranking is deterministic."""
    if not summaries:
        raise DataError("nothing to rank")
    ordered = sorted(summaries, key=lambda s: (-s.oddmswc, s.region_id))
    for i, s in enumerate(ordered, start=1):
        s.rank = i
    return ordered


SUMMARY_COLUMNS = ["region_id", "n_tiles", "n_waste", "oddmswc", "rank"]


def write_summary_csv(summaries: Sequence[RegionSummary], path: str | Path) -> str:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(SUMMARY_COLUMNS)
        for s in summaries:
            w.writerow([s.region_id, s.n_tiles_analyzed, s.n_waste, repr(s.oddmswc), s.rank or ""])
    return str(path)


def read_summary_csv(path: str | Path) -> list[RegionSummary]:
    out = []
    with open(path, newline="") as f:
        for rec in csv.DictReader(f):
            out.append(
                RegionSummary(
                    region_id=rec["region_id"],
                    n_tiles_analyzed=int(rec["n_tiles"]),
                    n_waste=int(rec["n_waste"]),
                    oddmswc=float(rec["oddmswc"]),
                    rank=int(rec["rank"]) if rec.get("rank") else None,
                )
            )
    return out


def export_map(
    grid: Grid,
    predictions: Sequence[Prediction],
    path: str | Path,
    waste_only: bool = False,
) -> str:
    """GeoJSON tile polygons with prediction properties (WGS84, 7 decimals).

    Output is byte-stable: tiles sorted by id, fixed precision, minified
    separators, sorted keys.
    """
    pred_by_tile = {p.tile_id: p for p in predictions}
    missing = [t.tile_id for t in grid.tiles if t.valid_fraction >= grid.min_valid_fraction
               and t.tile_id not in pred_by_tile]
    if missing:
        raise JoinError(f"{len(missing)} analyzed tiles lack predictions, e.g. {missing[:3]}")

    feats = []
    for t in sorted(grid.tiles, key=lambda t: t.tile_id):
        p = pred_by_tile.get(t.tile_id)
        if p is None:
            continue
        if waste_only and p.predicted_class != "waste":
            continue
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
                    "predicted_class": p.predicted_class,
                    "confidence": round(float(p.confidence), 7),
                },
            }
        )
    doc = {"type": "FeatureCollection", "features": feats}
    with open(path, "w") as f:
        json.dump(doc, f, separators=(",", ":"), sort_keys=True)
        f.write("\n")
    return str(path)
