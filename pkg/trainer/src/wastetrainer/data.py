"""Manifest-driven tile dataset with seeded augmentations.

Input contract: a manifest CSV (region_id,row,col,label,split) plus a
directory of PNGs named <region>_<row>_<col>.png, as produced by the mapping
pipeline's tile dump. Augmentation draws come from a generator seeded per
(seed, epoch), so batch composition and augmentation are reproducible.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from wastetrainer import CLASS_NAMES
from wastetrainer.config import Augmentations


@dataclass(frozen=True)
class ManifestRow:
    region_id: str
    row: int
    col: int
    label: str
    split: str

    @property
    def filename(self) -> str:
        return f"{self.region_id}_{self.row}_{self.col}.png"


def read_manifest(path: str | Path) -> list[ManifestRow]:
    rows = []
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        needed = {"region_id", "row", "col", "label", "split"}
        missing = needed - set(reader.fieldnames or [])
        if missing:
            raise ValueError(f"{path}: manifest missing columns {sorted(missing)}")
        for rec in reader:
            label = rec["label"].strip().lower()
            if label not in CLASS_NAMES:
                raise ValueError(f"{path}: unknown label {rec['label']!r}")
            rows.append(
                ManifestRow(
                    region_id=rec["region_id"],
                    row=int(rec["row"]),
                    col=int(rec["col"]),
                    label=label,
                    split=rec["split"],
                )
            )
    if not rows:
        raise ValueError(f"{path}: empty manifest")
    return rows


class TileDataset:
    """One split of the manifest, images loaded eagerly as uint8 arrays."""

    def __init__(self, rows: list[ManifestRow], images_dir: str | Path, split: str, input_size: int = 128):
        images_dir = Path(images_dir)
        self.split = split
        self.input_size = input_size
        mine = [r for r in rows if r.split == split]
        if not mine:
            raise ValueError(f"manifest contains no rows for split {split!r}")
        missing = [r.filename for r in mine if not (images_dir / r.filename).is_file()]
        if missing:
            raise FileNotFoundError(
                f"{len(missing)} tile images missing from {images_dir}, e.g. {missing[:5]}"
            )
        self.rows = mine
        self.images = []
        self.labels = np.empty(len(mine), dtype=np.int64)
        for i, r in enumerate(mine):
            with Image.open(images_dir / r.filename) as img:
                arr = np.asarray(img.convert("RGB"), dtype=np.uint8)
            if arr.shape[:2] != (input_size, input_size):
                arr = np.asarray(
                    Image.fromarray(arr).resize((input_size, input_size), Image.BILINEAR),
                    dtype=np.uint8,
                )
            self.images.append(arr)
            self.labels[i] = CLASS_NAMES.index(r.label)

    def __len__(self):
        return len(self.rows)

    def class_indices(self, label_idx: int) -> np.ndarray:
        return np.flatnonzero(self.labels == label_idx)


def _mosaic(ds: TileDataset, idx: int, rng: np.random.Generator) -> np.ndarray:
    """2x2 same-class collage randomly cropped back to tile size."""
    s = ds.input_size
    pool = ds.class_indices(int(ds.labels[idx]))
    picks = rng.choice(pool, size=3, replace=len(pool) < 3)
    quad = [ds.images[idx]] + [ds.images[int(p)] for p in picks]
    order = rng.permutation(4)
    canvas = np.zeros((2 * s, 2 * s, 3), dtype=np.uint8)
    for slot, q in enumerate(order):
        y, x = divmod(slot, 2)
        canvas[y * s : (y + 1) * s, x * s : (x + 1) * s] = quad[int(q)]
    oy = int(rng.integers(0, s + 1))
    ox = int(rng.integers(0, s + 1))
    return canvas[oy : oy + s, ox : ox + s]


def augment_image(
    img: np.ndarray, aug: Augmentations, rng: np.random.Generator
) -> np.ndarray:
    out = img
    if aug.hflip and rng.random() < 0.5:
        out = out[:, ::-1]
    if aug.vflip and rng.random() < 0.5:
        out = out[::-1]
    if aug.rotation_deg > 0:
        angle = float(rng.uniform(-aug.rotation_deg, aug.rotation_deg))
        out = np.asarray(
            Image.fromarray(np.ascontiguousarray(out)).rotate(angle, resample=Image.BILINEAR),
            dtype=np.uint8,
        )
    x = out.astype(np.float32)
    if aug.brightness_jitter > 0:
        x = x * (1.0 + rng.uniform(-aug.brightness_jitter, aug.brightness_jitter))
    if aug.contrast_jitter > 0:
        c = 1.0 + rng.uniform(-aug.contrast_jitter, aug.contrast_jitter)
        mean = x.mean()
        x = (x - mean) * c + mean
    return np.clip(x, 0, 255).astype(np.uint8)


def training_batches(
    ds: TileDataset,
    batch_size: int,
    aug: Augmentations,
    seed: int,
    epoch: int,
):
    """Shuffled augmented batches: (float32 NCHW in [0,1], int64 labels)."""
    rng = np.random.default_rng([seed, epoch])
    order = rng.permutation(len(ds))
    for lo in range(0, len(order), batch_size):
        take = order[lo : lo + batch_size]
        imgs = []
        for idx in take:
            idx = int(idx)
            base = ds.images[idx]
            if aug.mosaic_prob > 0 and rng.random() < aug.mosaic_prob:
                base = _mosaic(ds, idx, rng)
            imgs.append(augment_image(base, aug, rng))
        batch = np.stack(imgs).astype(np.float32) / 255.0
        yield batch.transpose(0, 3, 1, 2), ds.labels[take]


def eval_batches(ds: TileDataset, batch_size: int):
    for lo in range(0, len(ds), batch_size):
        chunk = ds.images[lo : lo + batch_size]
        batch = np.stack(chunk).astype(np.float32) / 255.0
        yield batch.transpose(0, 3, 1, 2), ds.labels[lo : lo + batch_size]
