"""Synthetic georeferenced fixtures with waste markers planted at known tiles.

A planting plan fully determines the raster bytes given its seed, so every
pipeline stage can be verified against exact ground truth. Markers are
scattered 3x3 clusters of a saturated high-red/low-green color at a density
comfortably above the reference classifier's decision threshold, so bilinear
resizing to the classifier input size cannot erase the signal; the background
noise range is chosen so that no background or blended pixel can ever satisfy
the marker rule.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from wastemap.errors import ConfigError, DataError
from wastemap.geo import Affine
from wastemap.infer import (
    MARKER_GREEN_MAX,
    MARKER_RED_MIN,
    Prediction,
    read_predictions_csv,
    write_predictions_csv,
)
from wastemap.raster import write_geotiff

MARKER_COLOR = (255, 20, 40)
CLUSTER = 3  # marker cluster edge, px
# background noise ranges; red stays < MARKER_RED_MIN and green > MARKER_GREEN_MAX
BG_RED = (40, 180)
BG_GREEN = (70, 200)
BG_BLUE = (40, 200)


@dataclass(frozen=True)
class PlantingPlan:
    rows: int
    cols: int
    planted: frozenset
    seed: int = 0
    gsd_m: float = 0.05
    tile_size_m: float = 5.0
    marker_density: float = 0.05
    region_id: str = "fixture"
    epsg: int = 32736
    origin: tuple[float, float] = (500000.0, 9300000.0)  # top-left, multiples of tile size

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ConfigError("plan needs at least a 1x1 grid")
        bad = [t for t in self.planted if not (0 <= t[0] < self.rows and 0 <= t[1] < self.cols)]
        if bad:
            raise ConfigError(f"planted tiles outside grid: {sorted(bad)[:5]}")
        if self.gsd_m <= 0 or self.tile_size_m <= 0:
            raise ConfigError("gsd_m and tile_size_m must be positive")
        if self.tile_size_m / self.gsd_m < CLUSTER + 2:
            raise ConfigError("tiles too small for marker clusters at this GSD")

    @property
    def oddmswc(self) -> float:
        return 100.0 * len(self.planted) / (self.rows * self.cols)


@dataclass
class FixturePaths:
    raster: str
    truth_csv: str
    plan_json: str
    region_id: str


def random_plan(rows: int, cols: int, n_planted: int, seed: int = 0, **kwargs) -> PlantingPlan:
    """Plan with n_planted tiles drawn uniformly without replacement."""
    total = rows * cols
    if n_planted > total:
        raise ConfigError(f"cannot plant {n_planted} tiles in a {rows}x{cols} grid")
    rng = np.random.default_rng(seed)
    flat = rng.choice(total, size=n_planted, replace=False)
    planted = frozenset((int(i // cols), int(i % cols)) for i in flat)
    return PlantingPlan(rows=rows, cols=cols, planted=planted, seed=seed, **kwargs)


def make_fixture(plan: PlantingPlan, out_dir: str | Path) -> FixturePaths:
    """Write the fixture GeoTIFF and its per-tile truth CSV."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    tpx = plan.tile_size_m / plan.gsd_m
    # ceil so the raster always covers every planned tile in full
    height = math.ceil(plan.rows * tpx - 1e-9)
    width = math.ceil(plan.cols * tpx - 1e-9)
    rng = np.random.default_rng(plan.seed)

    pixels = np.empty((height, width, 3), dtype=np.uint8)
    pixels[:, :, 0] = rng.integers(BG_RED[0], BG_RED[1] + 1, (height, width))
    pixels[:, :, 1] = rng.integers(BG_GREEN[0], BG_GREEN[1] + 1, (height, width))
    pixels[:, :, 2] = rng.integers(BG_BLUE[0], BG_BLUE[1] + 1, (height, width))

    tile_area = tpx * tpx
    n_clusters = max(1, math.ceil(plan.marker_density * tile_area / (CLUSTER * CLUSTER)))
    for r, c in sorted(plan.planted):
        # interior box, 1 px clear of the tile edges so clusters never straddle tiles
        r_lo = int(math.ceil(r * tpx)) + 1
        r_hi = int(math.floor((r + 1) * tpx)) - 1 - CLUSTER
        c_lo = int(math.ceil(c * tpx)) + 1
        c_hi = int(math.floor((c + 1) * tpx)) - 1 - CLUSTER
        if r_hi < r_lo or c_hi < c_lo:
            raise DataError(f"tile ({r},{c}) too small for marker placement")
        ys = rng.integers(r_lo, r_hi + 1, n_clusters)
        xs = rng.integers(c_lo, c_hi + 1, n_clusters)
        for y, x in zip(ys, xs):
            pixels[y : y + CLUSTER, x : x + CLUSTER, 0] = MARKER_COLOR[0]
            pixels[y : y + CLUSTER, x : x + CLUSTER, 1] = MARKER_COLOR[1]
            pixels[y : y + CLUSTER, x : x + CLUSTER, 2] = MARKER_COLOR[2]

    transform = Affine.north_up(plan.origin[0], plan.origin[1], plan.gsd_m)
    raster_path = out_dir / f"{plan.region_id}.tif"
    write_geotiff(raster_path, pixels, transform, epsg=plan.epsg)

    truth = [
        Prediction(
            tile_id=(r, c),
            predicted_class="waste" if (r, c) in plan.planted else "background",
            confidence=1.0,
        )
        for r in range(plan.rows)
        for c in range(plan.cols)
    ]
    truth_path = out_dir / f"{plan.region_id}_truth.csv"
    write_predictions_csv(truth, plan.region_id, truth_path)

    plan_path = out_dir / f"{plan.region_id}_plan.json"
    with open(plan_path, "w") as f:
        json.dump(
            {
                "rows": plan.rows,
                "cols": plan.cols,
                "planted": sorted(list(t) for t in plan.planted),
                "seed": plan.seed,
                "gsd_m": plan.gsd_m,
                "tile_size_m": plan.tile_size_m,
                "marker_density": plan.marker_density,
                "region_id": plan.region_id,
                "epsg": plan.epsg,
                "origin": list(plan.origin),
                "oddmswc": plan.oddmswc,
            },
            f,
            indent=2,
            sort_keys=True,
        )
        f.write("\n")
    return FixturePaths(str(raster_path), str(truth_path), str(plan_path), plan.region_id)


@dataclass
class DiffReport:
    exact_match: bool
    flipped: list  # (tile_id, truth, predicted)
    missing: list  # tile ids in truth but not predicted
    extra: list  # tile ids predicted but not in truth
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0


def verify_pipeline(truth_csv: str | Path, predictions: list[Prediction] | str | Path) -> DiffReport:
    """Per-tile diff of predictions against fixture truth."""
    truth_rows = read_predictions_csv(truth_csv)
    truth = {(r.region_id, *r.tile_id): r.predicted_class for r in truth_rows}
    if isinstance(predictions, (str, Path)):
        pred_rows = read_predictions_csv(predictions)
    else:
        pred_rows = list(predictions)
    truth_regions = {k[0] for k in truth}
    default_region = next(iter(truth_regions)) if len(truth_regions) == 1 else ""
    pred = {(p.region_id or default_region, *p.tile_id): p.predicted_class for p in pred_rows}

    missing = sorted(k for k in truth if k not in pred)
    extra = sorted(k for k in pred if k not in truth)
    flipped = []
    tp = fp = fn = tn = 0
    for key, t_cls in truth.items():
        p_cls = pred.get(key)
        if p_cls is None:
            continue
        if t_cls == "waste" and p_cls == "waste":
            tp += 1
        elif t_cls == "background" and p_cls == "waste":
            fp += 1
        elif t_cls == "waste" and p_cls == "background":
            fn += 1
        else:
            tn += 1
        if p_cls != t_cls:
            flipped.append((key, t_cls, p_cls))
    return DiffReport(
        exact_match=not flipped and not missing and not extra,
        flipped=sorted(flipped),
        missing=missing,
        extra=extra,
        tp=tp,
        fp=fp,
        fn=fn,
        tn=tn,
    )
