"""JIT kernels. Tiles are independent, so both loops parallelize over the batch.

The resize runs separably with a per-tile cache of horizontally interpolated
rows; the vertical pass then streams over contiguous float32 rows, which LLVM
vectorizes. Arithmetic (float32 lerp, round half up) must stay in lockstep
with _numpy_impl.
"""

import numpy as np
from numba import njit, prange

NAME = "numba"


@njit(parallel=True, cache=True)
def resize_bilinear(blocks, y0, y1, fy, x0, x1, fx, out):
    b, ih, iw, c = blocks.shape
    oh = out.shape[1]
    owc = out.shape[2]
    ow = owc // c
    for k in prange(b):
        hrows = np.empty((ih, owc), dtype=np.float32)
        for iy in range(ih):
            row = blocks[k, iy]
            for ox in range(ow):
                j0 = x0[ox]
                j1 = x1[ox]
                wx = fx[ox]
                base = ox * c
                for ch in range(c):
                    a = np.float32(row[j0, ch])
                    bb = np.float32(row[j1, ch])
                    hrows[iy, base + ch] = a + (bb - a) * wx
        for oy in range(oh):
            r0 = hrows[y0[oy]]
            r1 = hrows[y1[oy]]
            wy = fy[oy]
            orow = out[k, oy]
            for j in range(owc):
                t = r0[j]
                v = t + (r1[j] - t) * wy
                iv = int(v + np.float32(0.5))
                if iv > 255:
                    iv = 255
                elif iv < 0:
                    iv = 0
                orow[j] = iv
    return out


@njit(parallel=True, cache=True)
def marker_fraction(tensors, red_min, green_max, out):
    b, h, w, _c = tensors.shape
    for k in prange(b):
        n = 0
        for y in range(h):
            for x in range(w):
                if tensors[k, y, x, 0] >= red_min and tensors[k, y, x, 1] <= green_max:
                    n += 1
        out[k] = n / (h * w)
    return out
