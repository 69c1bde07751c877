"""Training configuration with the documented defaults."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path

import yaml


@dataclass
class Augmentations:
    hflip: bool = True
    vflip: bool = True
    rotation_deg: float = 15.0
    brightness_jitter: float = 0.2
    contrast_jitter: float = 0.2
    mosaic_prob: float = 0.5


@dataclass
class TrainerConfig:
    epochs: int = 150
    early_stopping: bool = True
    patience: int = 20
    optimizer: str = "adamw"
    initial_lr: float = 0.0005
    batch_size: int = 64
    input_size: int = 128
    seed: int = 0
    augment: Augmentations = field(default_factory=Augmentations)

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.initial_lr <= 0:
            raise ValueError(f"initial_lr must be positive, got {self.initial_lr}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_file(cls, path: str | Path) -> "TrainerConfig":
        with open(path) as f:
            doc = yaml.safe_load(f) or {}
        aug = Augmentations(**doc.pop("augment", {}))
        return cls(augment=aug, **doc)
