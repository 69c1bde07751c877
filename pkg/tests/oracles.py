"""Independent brute-force oracles used to verify the fast implementations.

Everything here is deliberately slow and literal: double loops, pairwise
counts, explicit rank assignment. None of it shares code with the package
paths under test.
"""

import numpy as np


def pairwise_auc(scores, labels) -> float:
    """P(score_pos > score_neg) + 0.5 P(tie), counted pair by pair."""
    scores = list(scores)
    labels = list(labels)
    pos = [s for s, l in zip(scores, labels) if l]
    neg = [s for s, l in zip(scores, labels) if not l]
    assert pos and neg, "oracle needs both classes"
    wins = 0.0
    for p in pos:
        for n in neg:
            if p > n:
                wins += 1.0
            elif p == n:
                wins += 0.5
    return wins / (len(pos) * len(neg))


def tally_confusion(pred_labels, true_labels):
    """(tp, fp, fn, tn) with waste positive, one sample at a time."""
    tp = fp = fn = tn = 0
    for p, t in zip(pred_labels, true_labels):
        if t == "waste":
            if p == "waste":
                tp += 1
            else:
                fn += 1
        else:
            if p == "waste":
                fp += 1
            else:
                tn += 1
    return tp, fp, fn, tn


def prf_oracle(tp, fp, fn):
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


def explicit_average_ranks(values):
    """1-based ranks, ties get the mean of their positions; explicit loops."""
    values = list(values)
    n = len(values)
    order = sorted(range(n), key=lambda i: values[i])
    ranks = [0.0] * n
    i = 0
    while i < n:
        j = i
        while j + 1 < n and values[order[j + 1]] == values[order[i]]:
            j += 1
        mean_rank = (i + j) / 2.0 + 1.0
        for k in range(i, j + 1):
            ranks[order[k]] = mean_rank
        i = j + 1
    return ranks


def brute_force_spearman(x, y) -> float:
    """Pearson correlation of explicitly averaged ranks."""
    rx = explicit_average_ranks(x)
    ry = explicit_average_ranks(y)
    n = len(rx)
    mx = sum(rx) / n
    my = sum(ry) / n
    num = sum((a - mx) * (b - my) for a, b in zip(rx, ry))
    den = (sum((a - mx) ** 2 for a in rx) * sum((b - my) ** 2 for b in ry)) ** 0.5
    return num / den


def bilinear_reference(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Per-pixel bilinear resize with center alignment and round-half-up.

    Same sampling convention as the production kernel but written as the
    obvious scalar float64 loop.
    """
    ih, iw, c = img.shape
    out = np.zeros((out_h, out_w, c), dtype=np.uint8)
    for oy in range(out_h):
        sy = min(max((oy + 0.5) * ih / out_h - 0.5, 0.0), ih - 1.0)
        y0 = min(int(sy), max(ih - 2, 0))
        y1 = min(y0 + 1, ih - 1)
        fy = sy - y0
        for ox in range(out_w):
            sx = min(max((ox + 0.5) * iw / out_w - 0.5, 0.0), iw - 1.0)
            x0 = min(int(sx), max(iw - 2, 0))
            x1 = min(x0 + 1, iw - 1)
            fx = sx - x0
            for ch in range(c):
                a = float(img[y0, x0, ch])
                b = float(img[y0, x1, ch])
                cc = float(img[y1, x0, ch])
                d = float(img[y1, x1, ch])
                top = a + (b - a) * fx
                bot = cc + (d - cc) * fx
                v = top + (bot - top) * fy
                out[oy, ox, ch] = min(255, max(0, int(v + 0.5)))
    return out


def cell_center_zonal(values: np.ndarray, transform, polygon, aggregation: str, nodata=None):
    """Scan every raster cell; include it iff its center point lies in the polygon."""
    from shapely.geometry import Point

    total = 0.0
    count = 0
    h, w = values.shape
    for row in range(h):
        for col in range(w):
            x, y = transform.apply(col + 0.5, row + 0.5)
            if nodata is not None and values[row, col] == nodata:
                continue
            if polygon.contains(Point(x, y)):
                total += float(values[row, col])
                count += 1
    if count == 0:
        return None
    return total if aggregation == "sum" else total / count


def full_tiles_by_corner_check(minx, miny, maxx, maxy, origin_x, origin_y, t):
    """Count tiles fully inside an axis-aligned footprint by testing all corners."""
    import math

    count = 0
    j = 0
    eps = 1e-9
    j_start = math.floor((minx - origin_x) / t) - 2
    j_end = math.ceil((maxx - origin_x) / t) + 2
    k_start = math.floor((miny - origin_y) / t) - 2
    k_end = math.ceil((maxy - origin_y) / t) + 2
    for j in range(j_start, j_end + 1):
        for k in range(k_start, k_end + 1):
            x0 = origin_x + j * t
            y0 = origin_y + k * t
            corners = [(x0, y0), (x0 + t, y0), (x0, y0 + t), (x0 + t, y0 + t)]
            if all(
                minx - eps <= cx <= maxx + eps and miny - eps <= cy <= maxy + eps
                for cx, cy in corners
            ):
                count += 1
    return count
