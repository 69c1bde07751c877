"""Hot pixel kernels with two interchangeable backends.

The numba backend JIT-compiles the inner loops and parallelizes over tiles;
the numpy backend is a vectorized fallback that produces bit-identical
output. Selection:

    WASTEMAP_KERNELS=numba   force numba (error if unavailable)
    WASTEMAP_KERNELS=numpy   force the pure-numpy fallback
    unset / auto             numba when importable, else numpy

Both backends share the same index/weight tables and the same float32
arithmetic, so results do not depend on the backend.
"""

from __future__ import annotations

import os
from functools import lru_cache

import numpy as np

from wastemap.errors import ConfigError

_ENV_VAR = "WASTEMAP_KERNELS"


def _pick_backend(name: str | None = None):
    choice = (name or os.environ.get(_ENV_VAR, "auto")).strip().lower()
    if choice in ("", "auto"):
        try:
            from wastemap.kernels import _numba_impl

            return _numba_impl
        except ImportError:
            from wastemap.kernels import _numpy_impl

            return _numpy_impl
    if choice == "numba":
        try:
            from wastemap.kernels import _numba_impl
        except ImportError as exc:
            raise ConfigError(f"{_ENV_VAR}=numba but numba is unavailable: {exc}") from exc
        return _numba_impl
    if choice == "numpy":
        from wastemap.kernels import _numpy_impl

        return _numpy_impl
    raise ConfigError(f"{_ENV_VAR} must be auto, numba, or numpy (got {choice!r})")


_backend = _pick_backend()


def active_backend() -> str:
    """Name of the kernel backend in use ('numba' or 'numpy')."""
    return _backend.NAME


def set_backend(name: str) -> str:
    """Override the kernel backend at runtime (mainly for tests/benchmarks)."""
    global _backend
    _backend = _pick_backend(name)
    return _backend.NAME


@lru_cache(maxsize=64)
def _lin_tables(n_in: int, n_out: int):
    """Bilinear index/weight tables for center-aligned resampling.

    Output pixel o samples source coordinate (o + 0.5) * n_in/n_out - 0.5,
    clamped to the valid range (edge replication).
    """
    x = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
    x = np.clip(x, 0.0, n_in - 1.0)
    i0 = np.minimum(x.astype(np.int64), max(n_in - 2, 0))
    frac = (x - i0).astype(np.float32)
    i1 = np.minimum(i0 + 1, n_in - 1)
    return i0, i1, frac


def resize_bilinear_batch(blocks: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Resize a uint8 batch (B, H, W, C) to (B, out_h, out_w, C).

    Bilinear, center-aligned, rounding half up. The identity case (H == out_h
    and W == out_w) reproduces the input exactly.
    """
    blocks = np.ascontiguousarray(blocks)
    if blocks.ndim != 4:
        raise ValueError(f"expected (B, H, W, C) batch, got shape {blocks.shape}")
    if blocks.dtype != np.uint8:
        raise ValueError(f"expected uint8 batch, got {blocks.dtype}")
    b, ih, iw, c = blocks.shape
    y0, y1, fy = _lin_tables(ih, out_h)
    x0, x1, fx = _lin_tables(iw, out_w)
    out = np.empty((b, out_h, out_w * c), dtype=np.uint8)
    _backend.resize_bilinear(blocks, y0, y1, fy, x0, x1, fx, out)
    return out.reshape(b, out_h, out_w, c)


def marker_fraction_batch(tensors: np.ndarray, red_min: int, green_max: int) -> np.ndarray:
    """Per-tile fraction of pixels with channel0 >= red_min and channel1 <= green_max."""
    tensors = np.ascontiguousarray(tensors)
    if tensors.ndim != 4 or tensors.shape[3] < 2:
        raise ValueError(f"expected (B, H, W, C>=2) batch, got shape {tensors.shape}")
    out = np.empty(tensors.shape[0], dtype=np.float64)
    _backend.marker_fraction(tensors, np.uint8(red_min), np.uint8(green_max), out)
    return out


def warmup() -> None:
    """Trigger JIT compilation outside of timed paths (no-op for numpy)."""
    probe = np.zeros((2, 4, 4, 3), dtype=np.uint8)
    resize_bilinear_batch(probe, 8, 8)
    marker_fraction_batch(probe, 200, 60)
