import csv

import numpy as np
import pytest
from PIL import Image


def _image(rng, waste: bool, size=128):
    img = np.empty((size, size, 3), dtype=np.uint8)
    img[:, :, 0] = rng.integers(40, 181, (size, size))
    img[:, :, 1] = rng.integers(70, 201, (size, size))
    img[:, :, 2] = rng.integers(40, 201, (size, size))
    if waste:
        for _ in range(40):
            y = int(rng.integers(1, size - 4))
            x = int(rng.integers(1, size - 4))
            img[y : y + 3, x : x + 3] = (255, 20, 40)
    return img


@pytest.fixture(scope="session")
def planted_dataset(tmp_path_factory):
    """200-tile separable dataset: manifest CSV + PNG directory (the trainer's input contract)."""
    root = tmp_path_factory.mktemp("trainset")
    images = root / "images"
    images.mkdir()
    rng = np.random.default_rng(123)
    rows = []
    per_class = 100
    split_of = lambda i: "train" if i < 70 else ("val" if i < 85 else "test")
    for label_idx, label in enumerate(["background", "waste"]):
        for i in range(per_class):
            row, col = i, label_idx
            name = f"synth_{row}_{col}.png"
            Image.fromarray(_image(rng, waste=label == "waste")).save(images / name)
            rows.append(("synth", row, col, label, split_of(i)))
    manifest = root / "manifest.csv"
    with open(manifest, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["region_id", "row", "col", "label", "split"])
        w.writerows(rows)
    return manifest, images


@pytest.fixture(scope="session")
def quick_checkpoint(planted_dataset, tmp_path_factory):
    """Checkpoint trained with the fast test configuration (<= 20 epochs)."""
    from wastetrainer.config import TrainerConfig
    from wastetrainer.train import train

    manifest, images = planted_dataset
    out = tmp_path_factory.mktemp("trainer_out")
    # separable fixture converges decisively with a slightly hotter lr and
    # smaller batches (more steps per epoch on 140 training tiles)
    config = TrainerConfig(epochs=20, patience=20, batch_size=16, initial_lr=0.003, seed=1)
    ckpt, log = train(manifest, images, config, out)
    return ckpt, log, out
