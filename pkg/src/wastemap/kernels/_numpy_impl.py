"""Pure-numpy kernel fallback. Mirrors _numba_impl arithmetic exactly.

Batches are processed in chunks to bound the size of the float32 gather
temporaries. Output values match the JIT backend bit for bit: same float32
lerps, same round-half-up.
"""

import numpy as np

NAME = "numpy"

_CHUNK = 64


def resize_bilinear(blocks, y0, y1, fy, x0, x1, fx, out):
    b, ih, iw, c = blocks.shape
    oh = out.shape[1]
    owc = out.shape[2]
    ow = owc // c
    fx_col = fx[None, None, :, None]
    fy_col = fy[None, :, None, None]
    for lo in range(0, b, _CHUNK):
        hi = min(lo + _CHUNK, b)
        src = blocks[lo:hi].astype(np.float32)
        a = src[:, :, x0, :]
        bb = src[:, :, x1, :]
        hrows = a + (bb - a) * fx_col  # (n, ih, ow, c)
        t = hrows[:, y0]
        v = t + (hrows[:, y1] - t) * fy_col  # (n, oh, ow, c)
        v += np.float32(0.5)
        np.clip(v, 0.0, 255.0, out=v)
        out[lo:hi] = v.astype(np.uint8).reshape(hi - lo, oh, owc)
    return out


def marker_fraction(tensors, red_min, green_max, out):
    hits = (tensors[:, :, :, 0] >= red_min) & (tensors[:, :, :, 1] <= green_max)
    counts = hits.sum(axis=(1, 2), dtype=np.int64)
    np.divide(counts, tensors.shape[1] * tensors.shape[2], out=out)
    return out
