"""Compact convolutional tile classifier.

The architecture is described by an explicit layer table so the exporter can
serialize it without graph tracing; every layer type maps one-to-one onto a
portable-graph operator.
"""

from __future__ import annotations

import torch
from torch import nn

# (kind, params); spatial sizes assume a 128 px input
ARCH = [
    ("conv", {"in_ch": 3, "out_ch": 16, "kernel": 3, "stride": 2, "pad": 1}),
    ("relu", {}),
    ("conv", {"in_ch": 16, "out_ch": 32, "kernel": 3, "stride": 2, "pad": 1}),
    ("relu", {}),
    ("maxpool", {"kernel": 2, "stride": 2}),
    ("conv", {"in_ch": 32, "out_ch": 64, "kernel": 3, "stride": 1, "pad": 1}),
    ("relu", {}),
    ("gap", {}),
    ("flatten", {}),
    ("linear", {"in_features": 64, "out_features": 2}),
]


def build_model(seed: int = 0) -> nn.Sequential:
    """Model producing 2-class logits; weight init is seed-deterministic."""
    torch.manual_seed(seed)
    layers: list[nn.Module] = []
    for kind, p in ARCH:
        if kind == "conv":
            layers.append(
                nn.Conv2d(p["in_ch"], p["out_ch"], p["kernel"], stride=p["stride"], padding=p["pad"])
            )
        elif kind == "relu":
            layers.append(nn.ReLU())
        elif kind == "maxpool":
            layers.append(nn.MaxPool2d(p["kernel"], stride=p["stride"]))
        elif kind == "gap":
            layers.append(nn.AdaptiveAvgPool2d(1))
        elif kind == "flatten":
            layers.append(nn.Flatten(1))
        elif kind == "linear":
            layers.append(nn.Linear(p["in_features"], p["out_features"]))
        else:
            raise ValueError(f"unknown layer kind {kind!r}")
    return nn.Sequential(*layers)


@torch.no_grad()
def predict_proba(model: nn.Sequential, batch) -> torch.Tensor:
    """Softmax probabilities for a float32 NCHW batch in [0, 1]."""
    model.eval()
    logits = model(torch.as_tensor(batch))
    return torch.softmax(logits, dim=1)
