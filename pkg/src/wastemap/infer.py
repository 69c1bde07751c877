"""Tile classification: pluggable backends, batched runs, confidence stats.

Class order is fixed package-wide: index 0 = background, index 1 = waste.
The decision rule is pure argmax; a tie (p_waste exactly 0.5) resolves to
background, matching the strict-threshold semantics of the reference rule.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from wastemap import kernels
from wastemap.errors import (
    BackendError,
    ConfigError,
    DataError,
    JoinError,
)
from wastemap.geogrid import Grid
from wastemap.raster import RasterDataset
from wastemap.tiles import TENSOR_SIZE, extract_batch

CLASS_NAMES = ("background", "waste")

# pixel rule of the deterministic reference backend; synthbench plants to beat it
MARKER_RED_MIN = 200
MARKER_GREEN_MAX = 60
DEFAULT_MARKER_FRACTION = 0.02


@dataclass
class Prediction:
    tile_id: tuple[int, int]
    predicted_class: str
    confidence: float
    region_id: str = ""


class ClassifierBackend(Protocol):
    """Batch classifier contract: uint8 (B, S, S, 3) tensors to (B, 2) probabilities."""

    name: str

    def predict_proba(self, tensors: np.ndarray) -> np.ndarray: ...


class ReferenceClassifier:
    """Deterministic pixel-rule oracle backend (no learned model).

    A tile is waste iff the fraction of marker pixels (channel0 >= 200 and
    channel1 <= 60) strictly exceeds the threshold fraction. Probabilities
    are a fixed logistic of that fraction, so argmax reproduces the strict
    threshold rule and confidence is always >= 0.5.
    """

    name = "reference"

    def __init__(self, fraction: float = DEFAULT_MARKER_FRACTION, steepness: float = 200.0):
        if not (0.0 <= fraction < 1.0):
            raise ConfigError(f"threshold fraction must lie in [0, 1), got {fraction}")
        self.fraction = float(fraction)
        self.steepness = float(steepness)

    def predict_proba(self, tensors: np.ndarray) -> np.ndarray:
        frac = kernels.marker_fraction_batch(tensors, MARKER_RED_MIN, MARKER_GREEN_MAX)
        p_waste = 1.0 / (1.0 + np.exp(-self.steepness * (frac - self.fraction)))
        return np.column_stack([1.0 - p_waste, p_waste])


class NeuralBackend:
    """Backend over a portable operator-graph model file (see onnxio)."""

    name = "neural"

    def __init__(self, model):
        self._model = model
        self.metadata = model.metadata

    def predict_proba(self, tensors: np.ndarray) -> np.ndarray:
        x = tensors.astype(np.float32) / np.float32(255.0)
        if self._model.input_layout == "NCHW":
            x = np.ascontiguousarray(x.transpose(0, 3, 1, 2))
        probs = self._model.run(x)
        return probs.astype(np.float64)


def load_model(path: str | Path) -> NeuralBackend:
    """Load a portable model file and validate the classifier contract."""
    from wastemap import onnxio

    model = onnxio.load_model(path)
    return NeuralBackend(model)


def predictions_from_probs(
    probs: np.ndarray, tile_ids: Sequence[tuple[int, int]], region_id: str = ""
) -> list[Prediction]:
    preds = []
    for i, tid in enumerate(tile_ids):
        p_bg, p_waste = float(probs[i, 0]), float(probs[i, 1])
        total = p_bg + p_waste
        if not math.isfinite(total) or abs(total - 1.0) > 1e-5:
            raise BackendError(f"backend probabilities do not sum to 1 at tile {tid}: {total}")
        waste = p_waste > 0.5
        preds.append(
            Prediction(
                tile_id=tid,
                predicted_class="waste" if waste else "background",
                confidence=p_waste if waste else p_bg,
                region_id=region_id,
            )
        )
    return preds


def run_inference(
    raster: RasterDataset,
    grid: Grid,
    backend: ClassifierBackend,
    batch_size: int = 64,
    region_id: str = "",
    size: int = TENSOR_SIZE,
    checkpoint_path: str | Path | None = None,
    checkpoint_every: int = 100,
) -> tuple[list[Prediction], list[tuple[int, int]]]:
    """Classify every analyzed tile of a grid, in grid order.

    Tiles below the grid's valid-fraction threshold are skipped up front;
    all-nodata tiles are skipped during extraction. With a checkpoint path,
    completed batches are flushed periodically and a rerun resumes after the
    last flushed tile, producing the identical final prediction set.
    """
    if batch_size < 1:
        raise ConfigError(f"batch_size must be >= 1, got {batch_size}")
    analyzed = grid.analyzed()
    skipped = [t.tile_id for t in grid.tiles if t.valid_fraction < grid.min_valid_fraction]

    preds: list[Prediction] = []
    start_index = 0
    ckpt = _Checkpoint(checkpoint_path, checkpoint_every) if checkpoint_path else None
    if ckpt is not None:
        resumed = ckpt.load(region_id)
        if resumed is not None:
            preds, start_index = resumed

    pending = analyzed[start_index:] if start_index else analyzed
    batch_no = 0
    extra_skips: list = []
    for batch in extract_batch(raster, pending, batch_size=batch_size, size=size, skipped=extra_skips):
        try:
            probs = np.asarray(backend.predict_proba(batch.tensors), dtype=np.float64)
        except BackendError:
            raise
        except Exception as exc:
            if ckpt is not None:
                ckpt.flush(preds, _advance(analyzed, start_index, preds), region_id)
            raise BackendError(
                f"backend {getattr(backend, 'name', '?')} failed on tiles "
                f"{batch.tile_ids[0]}..{batch.tile_ids[-1]}: {exc}"
            ) from exc
        if probs.shape != (len(batch), 2):
            raise BackendError(f"backend returned shape {probs.shape}, expected ({len(batch)}, 2)")
        preds.extend(predictions_from_probs(probs, batch.tile_ids, region_id))
        batch_no += 1
        if ckpt is not None and batch_no % ckpt.every == 0:
            ckpt.flush(preds, _advance(analyzed, start_index, preds), region_id)
    skipped.extend(extra_skips)
    if ckpt is not None:
        ckpt.finalize()
    return preds, sorted(skipped)


def _advance(analyzed, start_index, preds) -> int:
    """Index into `analyzed` just past the last predicted tile."""
    if not preds:
        return start_index
    last = preds[-1].tile_id
    for i in range(len(analyzed) - 1, -1, -1):
        if analyzed[i].tile_id == last:
            return i + 1
    return start_index


class _Checkpoint:
    """Partial-result flushing for resumable long runs."""

    def __init__(self, path: str | Path, every: int):
        self.path = Path(path)
        self.every = max(1, int(every))
        self.state_path = self.path.with_suffix(".state.json")

    def load(self, region_id: str):
        if not (self.path.is_file() and self.state_path.is_file()):
            return None
        with open(self.state_path) as f:
            state = json.load(f)
        if state.get("region_id") != region_id:
            raise DataError(
                f"checkpoint at {self.path} belongs to region {state.get('region_id')!r}, "
                f"not {region_id!r}"
            )
        preds = read_predictions_csv(self.path)
        return preds, int(state["next_index"])

    def flush(self, preds, next_index: int, region_id: str):
        write_predictions_csv(preds, region_id, self.path)
        with open(self.state_path, "w") as f:
            json.dump({"region_id": region_id, "next_index": next_index, "n_done": len(preds)}, f)
            f.write("\n")

    def finalize(self):
        if self.state_path.is_file():
            self.state_path.unlink()


def confidence_stats(predictions: Sequence[Prediction], truth: dict | None = None) -> dict:
    """Overall confidence summary; split by correctness when truth is given.

    `truth` maps tile_id (or (region, row, col)) to the true class name.
    """
    if not predictions:
        raise DataError("no predictions to summarize")
    conf = np.array([p.confidence for p in predictions])
    stats = {
        "n": len(predictions),
        "mean_confidence": float(conf.mean()),
        "median_confidence": float(np.median(conf)),
    }
    if truth is not None:
        correct, incorrect = [], []
        matched = 0
        for p in predictions:
            t = truth.get(p.tile_id)
            if t is None and p.region_id:
                t = truth.get((p.region_id, *p.tile_id))
            if t is None:
                continue
            matched += 1
            (correct if t == p.predicted_class else incorrect).append(p.confidence)
        if matched == 0:
            raise JoinError("no overlap between predictions and truth tile ids")
        stats["n_matched"] = matched
        stats["mean_confidence_correct"] = float(np.mean(correct)) if correct else None
        stats["mean_confidence_incorrect"] = float(np.mean(incorrect)) if incorrect else None
    return stats


# --- prediction CSV interchange -------------------------------------------

PREDICTION_COLUMNS = ["region_id", "row", "col", "predicted_class", "confidence"]


def write_predictions_csv(
    predictions: Sequence[Prediction], region_id: str, path: str | Path
) -> str:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(PREDICTION_COLUMNS)
        for p in predictions:
            w.writerow(
                [
                    p.region_id or region_id,
                    p.tile_id[0],
                    p.tile_id[1],
                    p.predicted_class,
                    repr(float(p.confidence)),
                ]
            )
    return str(path)


def read_predictions_csv(path: str | Path) -> list[Prediction]:
    preds = []
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        fields = reader.fieldnames or []
        cls_col = "predicted_class" if "predicted_class" in fields else "label"
        if cls_col not in fields:
            raise DataError(f"{path}: no predicted_class or label column")
        for rec in reader:
            cls = rec[cls_col].strip().lower()
            if cls not in CLASS_NAMES:
                raise DataError(f"{path}: unknown class {rec[cls_col]!r}")
            preds.append(
                Prediction(
                    tile_id=(int(rec["row"]), int(rec["col"])),
                    predicted_class=cls,
                    confidence=float(rec.get("confidence") or 1.0),
                    region_id=rec.get("region_id", ""),
                )
            )
    return preds
