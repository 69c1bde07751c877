"""Training loop: AdamW, seeded data order, early stopping on waste-F1."""

from __future__ import annotations

import json
import time
from pathlib import Path

import numpy as np
import torch
from torch import nn

from wastetrainer import CLASS_NAMES
from wastetrainer.config import TrainerConfig
from wastetrainer.data import TileDataset, eval_batches, read_manifest, training_batches
from wastetrainer.model import ARCH, build_model


def waste_f1(pred: np.ndarray, truth: np.ndarray) -> float:
    waste = CLASS_NAMES.index("waste")
    tp = int(np.sum((pred == waste) & (truth == waste)))
    fp = int(np.sum((pred == waste) & (truth != waste)))
    fn = int(np.sum((pred != waste) & (truth == waste)))
    if tp == 0:
        return 0.0
    precision = tp / (tp + fp)
    recall = tp / (tp + fn)
    return 2 * precision * recall / (precision + recall)


@torch.no_grad()
def evaluate(model: nn.Sequential, ds: TileDataset, batch_size: int) -> dict:
    model.eval()
    preds, labels = [], []
    for batch, y in eval_batches(ds, batch_size):
        logits = model(torch.as_tensor(batch))
        preds.append(logits.argmax(dim=1).numpy())
        labels.append(y)
    pred = np.concatenate(preds)
    truth = np.concatenate(labels)
    return {
        "f1_waste": waste_f1(pred, truth),
        "accuracy": float(np.mean(pred == truth)),
        "n": int(truth.size),
    }


def train(
    manifest_path: str | Path,
    images_dir: str | Path,
    config: TrainerConfig,
    out_dir: str | Path,
) -> tuple[Path, list[dict]]:
    """Fit on the manifest's train split, early-stop on val waste-F1.

    Returns (best checkpoint path, per-epoch metrics log). The log and the
    resolved config land next to the checkpoint.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = read_manifest(manifest_path)
    splits = {r.split for r in rows}
    for needed in ("train", "val"):
        if needed not in splits:
            raise ValueError(f"manifest lacks a {needed!r} split")
    train_ds = TileDataset(rows, images_dir, "train", config.input_size)
    val_ds = TileDataset(rows, images_dir, "val", config.input_size)

    torch.manual_seed(config.seed)
    model = build_model(seed=config.seed)
    if config.optimizer.lower() != "adamw":
        raise ValueError(f"unsupported optimizer {config.optimizer!r}")
    optimizer = torch.optim.AdamW(model.parameters(), lr=config.initial_lr)
    loss_fn = nn.CrossEntropyLoss()

    best_f1 = -1.0
    best_epoch = -1
    since_best = 0
    ckpt_path = out_dir / "checkpoint.pt"
    log: list[dict] = []

    for epoch in range(config.epochs):
        model.train()
        t0 = time.time()
        losses = []
        for batch, y in training_batches(
            train_ds, config.batch_size, config.augment, config.seed, epoch
        ):
            optimizer.zero_grad()
            logits = model(torch.as_tensor(batch))
            loss = loss_fn(logits, torch.as_tensor(y))
            loss.backward()
            optimizer.step()
            losses.append(float(loss.detach()))
        val = evaluate(model, val_ds, config.batch_size)
        entry = {
            "epoch": epoch,
            "train_loss": float(np.mean(losses)),
            "val_f1_waste": val["f1_waste"],
            "val_accuracy": val["accuracy"],
            "seconds": round(time.time() - t0, 3),
        }
        log.append(entry)

        if val["f1_waste"] > best_f1:
            best_f1 = val["f1_waste"]
            best_epoch = epoch
            since_best = 0
            torch.save(
                {
                    "state_dict": model.state_dict(),
                    "arch": ARCH,
                    "input_size": config.input_size,
                    "class_names": list(CLASS_NAMES),
                    "config": config.to_dict(),
                    "epoch": epoch,
                    "val_f1_waste": best_f1,
                },
                ckpt_path,
            )
        else:
            since_best += 1
            if config.early_stopping and since_best >= config.patience:
                break

    with open(out_dir / "training_log.json", "w") as f:
        json.dump(
            {
                "config": config.to_dict(),
                "best_epoch": best_epoch,
                "best_val_f1_waste": best_f1,
                "epochs_run": len(log),
                "epochs": log,
            },
            f,
            indent=2,
            sort_keys=True,
        )
        f.write("\n")
    return ckpt_path, log
