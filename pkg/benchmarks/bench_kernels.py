#!/usr/bin/env python3
"""Benchmark the numba kernels against the pure-numpy fallback.

Covers the two hot paths of the classification pipeline: bilinear resize of
tile blocks to the 128x128 classifier input and marker-fraction counting.
Run directly:

    python benchmarks/bench_kernels.py [--batch 512] [--repeats 5]

The same comparison at pipeline level: run the acceptance suite once with
WASTEMAP_KERNELS=numba and once with WASTEMAP_KERNELS=numpy.
"""

import argparse
import time

import numpy as np

from wastemap.kernels import _numpy_impl, marker_fraction_batch, resize_bilinear_batch, set_backend

try:
    from wastemap.kernels import _numba_impl  # noqa: F401

    HAVE_NUMBA = True
except ImportError:
    HAVE_NUMBA = False


def time_backend(name: str, blocks: np.ndarray, repeats: int) -> dict:
    set_backend(name)
    # warm up (JIT compile for numba, cache touch for numpy)
    resize_bilinear_batch(blocks[:2], 128, 128)
    out = resize_bilinear_batch(blocks, 128, 128)
    marker_fraction_batch(out, 200, 60)

    t0 = time.perf_counter()
    for _ in range(repeats):
        out = resize_bilinear_batch(blocks, 128, 128)
    t_resize = (time.perf_counter() - t0) / repeats

    t0 = time.perf_counter()
    for _ in range(repeats):
        marker_fraction_batch(out, 200, 60)
    t_frac = (time.perf_counter() - t0) / repeats

    return {"resize_s": t_resize, "fraction_s": t_frac, "out": out}


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--batch", type=int, default=512, help="tiles per batch")
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--sources", default="20,50,100,143", help="source tile sizes in px")
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    print(f"batch={args.batch} repeats={args.repeats} numba_available={HAVE_NUMBA}")
    print(f"{'src':>5} {'backend':>7} {'resize ms':>10} {'frac ms':>9} {'tiles/s':>10}")
    for src in (int(s) for s in args.sources.split(",")):
        blocks = rng.integers(0, 256, (args.batch, src, src, 3)).astype(np.uint8)
        results = {}
        backends = ["numpy"] + (["numba"] if HAVE_NUMBA else [])
        for name in backends:
            r = time_backend(name, blocks, args.repeats)
            results[name] = r
            total = r["resize_s"] + r["fraction_s"]
            print(
                f"{src:>5} {name:>7} {r['resize_s'] * 1e3:>10.2f} "
                f"{r['fraction_s'] * 1e3:>9.2f} {args.batch / total:>10.0f}"
            )
        if len(results) == 2:
            same = np.array_equal(results["numba"]["out"], results["numpy"]["out"])
            speedup = (
                (results["numpy"]["resize_s"] + results["numpy"]["fraction_s"])
                / (results["numba"]["resize_s"] + results["numba"]["fraction_s"])
            )
            print(f"{'':>5} identical={same} speedup={speedup:.2f}x")
    set_backend("auto")


if __name__ == "__main__":
    main()
