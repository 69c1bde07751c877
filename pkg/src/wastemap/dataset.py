"""Labeled-tile management: annotation import, class balance, train/val/test splits.

Splits are stratified by (region, class) so every region stays evaluable on
its own test slice. Within a stratum, records are shuffled by a generator
seeded from (seed, region, class) and assigned by cumulative ratio with
largest-remainder rounding; the result depends only on the record set, the
ratios, and the seed, never on input order.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import warnings
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from wastemap.errors import ConfigError, DataError
from wastemap.infer import CLASS_NAMES

SPLITS = ("train", "val", "test")


@dataclass(frozen=True)
class AnnotationRecord:
    region_id: str
    tile_id: tuple[int, int]
    label: str
    annotator: str | None = None
    timestamp: str | None = None
    split: str | None = None

    @property
    def key(self):
        return (self.region_id, self.tile_id[0], self.tile_id[1])


@dataclass
class BalanceReport:
    per_region: dict  # region -> {"waste": n, "background": n, "imbalance": ratio|None}

    def total(self) -> int:
        return sum(v["waste"] + v["background"] for v in self.per_region.values())


@dataclass
class DatasetManifest:
    records: list[AnnotationRecord]
    seed: int
    ratios: tuple[float, float, float]

    def __post_init__(self):
        if abs(sum(self.ratios) - 1.0) > 1e-9:
            raise ConfigError(f"split ratios must sum to 1, got {self.ratios}")
        unsplit = [r for r in self.records if r.split not in SPLITS]
        if unsplit:
            raise DataError(f"{len(unsplit)} records lack a split assignment")

    def split_counts(self) -> dict:
        counts = {s: 0 for s in SPLITS}
        for r in self.records:
            counts[r.split] += 1
        return counts


def _normalize_label(raw: str) -> str:
    label = raw.strip().lower()
    if label not in CLASS_NAMES:
        raise DataError(f"unknown label {raw!r} (expected one of {CLASS_NAMES})")
    return label


def balance_report(records: list[AnnotationRecord]) -> BalanceReport:
    per_region: dict = {}
    for r in records:
        slot = per_region.setdefault(r.region_id, {"waste": 0, "background": 0})
        slot[r.label] += 1
    for slot in per_region.values():
        slot["imbalance"] = (
            slot["waste"] / slot["background"] if slot["background"] else None
        )
    return BalanceReport(per_region=per_region)


def import_annotations(path: str | Path, grid=None) -> tuple[list[AnnotationRecord], BalanceReport]:
    """Read annotations from CSV or GeoJSON; dedupe; reject label conflicts.

    CSV columns: region_id,row,col,label[,annotator,timestamp]. GeoJSON input
    needs point features with region_id/label properties plus a grid to snap
    into.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"annotation file not found: {path}")
    if path.suffix.lower() in (".geojson", ".json"):
        raw = _read_geojson_annotations(path, grid)
    else:
        raw = _read_csv_annotations(path)

    seen: dict = {}
    bad_rows = []
    for idx, rec in raw:
        try:
            rec = replace(rec, label=_normalize_label(rec.label))
        except DataError:
            bad_rows.append((idx, rec.label))
            continue
        prev = seen.get(rec.key)
        if prev is None:
            seen[rec.key] = rec
        elif prev.label != rec.label:
            raise DataError(
                f"conflicting labels for {rec.key}: {prev.label!r} vs {rec.label!r}"
            )
    if bad_rows:
        raise DataError(f"unknown label strings at rows {bad_rows[:10]}")
    records = sorted(seen.values(), key=lambda r: r.key)
    return records, balance_report(records)


def _read_csv_annotations(path: Path):
    out = []
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        needed = {"region_id", "row", "col", "label"}
        missing = needed - set(reader.fieldnames or [])
        if missing:
            raise DataError(f"{path}: annotation CSV missing columns {sorted(missing)}")
        for idx, rec in enumerate(reader, start=2):
            out.append(
                (
                    idx,
                    AnnotationRecord(
                        region_id=rec["region_id"].strip(),
                        tile_id=(int(rec["row"]), int(rec["col"])),
                        label=rec["label"],
                        annotator=rec.get("annotator") or None,
                        timestamp=rec.get("timestamp") or None,
                    ),
                )
            )
    return out


def _read_geojson_annotations(path: Path, grid):
    if grid is None:
        raise ConfigError("GeoJSON annotations need a grid to snap points into")
    with open(path) as f:
        doc = json.load(f)
    feats = doc.get("features", [])
    out = []
    t = grid.tile_size_m
    for idx, feat in enumerate(feats):
        geom = feat.get("geometry") or {}
        props = feat.get("properties") or {}
        if geom.get("type") != "Point":
            raise DataError(f"feature {idx}: only Point annotations are supported")
        x, y = geom["coordinates"][:2]
        col = math.floor((x - grid.origin_x) / t)
        row = math.floor((grid.origin_y_top - y) / t)
        if not (0 <= row < grid.n_rows and 0 <= col < grid.n_cols):
            raise DataError(f"feature {idx}: point falls outside the grid")
        out.append(
            (
                idx,
                AnnotationRecord(
                    region_id=str(props.get("region_id", "")),
                    tile_id=(row, col),
                    label=str(props.get("label", "")),
                ),
            )
        )
    return out


def _largest_remainder(n: int, ratios) -> list[int]:
    quotas = [r * n for r in ratios]
    base = [math.floor(q) for q in quotas]
    short = n - sum(base)
    order = sorted(range(len(ratios)), key=lambda i: (-(quotas[i] - base[i]), i))
    for i in order[:short]:
        base[i] += 1
    return base


def _stratum_rng(seed: int, region_id: str, label: str) -> np.random.Generator:
    digest = hashlib.sha256(f"{region_id}|{label}".encode()).digest()
    key = int.from_bytes(digest[:8], "big")
    return np.random.default_rng([seed, key])


def make_splits(
    records: list[AnnotationRecord],
    ratios: tuple[float, float, float] = (0.7, 0.15, 0.15),
    seed: int = 42,
) -> DatasetManifest:
    """Assign train/val/test per (region, class) stratum, reproducibly."""
    if len(ratios) != len(SPLITS):
        raise ConfigError(f"need {len(SPLITS)} ratios, got {len(ratios)}")
    if any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError(f"ratios must be nonnegative and sum to 1, got {ratios}")

    strata: dict = {}
    for rec in records:
        strata.setdefault((rec.region_id, rec.label), []).append(rec)

    out: list[AnnotationRecord] = []
    for (region_id, label), members in sorted(strata.items()):
        members = sorted(members, key=lambda r: r.tile_id)
        if len(members) < len(SPLITS):
            warnings.warn(
                f"stratum ({region_id}, {label}) has {len(members)} records; "
                f"cannot populate all splits",
                stacklevel=2,
            )
        rng = _stratum_rng(seed, region_id, label)
        perm = rng.permutation(len(members))
        counts = _largest_remainder(len(members), ratios)
        cursor = 0
        for split, k in zip(SPLITS, counts):
            for i in range(cursor, cursor + k):
                out.append(replace(members[perm[i]], split=split))
            cursor += k
    out.sort(key=lambda r: r.key)
    return DatasetManifest(records=out, seed=seed, ratios=tuple(ratios))


MANIFEST_COLUMNS = ["region_id", "row", "col", "label", "split"]


def export_manifest(manifest: DatasetManifest, path: str | Path) -> str:
    """The trainer input contract: CSV sorted by (region, row, col)."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(MANIFEST_COLUMNS)
        for r in sorted(manifest.records, key=lambda r: r.key):
            w.writerow([r.region_id, r.tile_id[0], r.tile_id[1], r.label, r.split])
    return str(path)


def import_manifest(path: str | Path, seed: int = 0, ratios=(0.7, 0.15, 0.15)) -> DatasetManifest:
    records = []
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        missing = set(MANIFEST_COLUMNS) - set(reader.fieldnames or [])
        if missing:
            raise DataError(f"{path}: manifest missing columns {sorted(missing)}")
        for rec in reader:
            records.append(
                AnnotationRecord(
                    region_id=rec["region_id"],
                    tile_id=(int(rec["row"]), int(rec["col"])),
                    label=_normalize_label(rec["label"]),
                    split=rec["split"],
                )
            )
    return DatasetManifest(records=records, seed=seed, ratios=tuple(ratios))
