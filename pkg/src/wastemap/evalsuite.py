"""Classification metrics and bootstrap stability curves.

Waste is the positive class throughout. ROC AUC is computed as the
Mann-Whitney statistic via rank sums with average ranks for ties. Bootstrap
curves resample the test set WITHOUT replacement within each class
(stratified subsampling that preserves the class balance), with one child
seed per (size, replicate), so curves are reproducible and independent of
scheduling.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from wastemap.errors import ConfigError, DataError, JoinError

POSITIVE = "waste"
NEGATIVE = "background"


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


@dataclass
class ClassMetrics:
    precision: float
    recall: float
    f1: float
    support: int
    zero_division_flags: list[str] = field(default_factory=list)


@dataclass
class MetricReport:
    counts: ConfusionCounts
    waste: ClassMetrics
    background: ClassMetrics
    accuracy: float


def confusion(predictions: dict, truth: dict) -> ConfusionCounts:
    """Tally a prediction map against a truth map sharing the same keys."""
    pkeys, tkeys = set(predictions), set(truth)
    if pkeys != tkeys:
        missing = sorted(tkeys - pkeys)[:5]
        extra = sorted(pkeys - tkeys)[:5]
        raise JoinError(
            f"prediction/truth keys misaligned (missing={missing}, extra={extra})"
        )
    tp = fp = fn = tn = 0
    for key, t in truth.items():
        p = predictions[key]
        if t == POSITIVE:
            if p == POSITIVE:
                tp += 1
            else:
                fn += 1
        else:
            if p == POSITIVE:
                fp += 1
            else:
                tn += 1
    return ConfusionCounts(tp, fp, fn, tn)


def _prf(tp: int, fp: int, fn: int) -> tuple[float, float, float, list[str]]:
    flags = []
    if tp + fp > 0:
        precision = tp / (tp + fp)
    else:
        precision, flags = 0.0, flags + ["precision"]
    if tp + fn > 0:
        recall = tp / (tp + fn)
    else:
        recall, flags = 0.0, flags + ["recall"]
    if precision + recall > 0:
        f1 = 2 * precision * recall / (precision + recall)
    else:
        f1, flags = 0.0, flags + ["f1"]
    return precision, recall, f1, flags


def prf1(counts: ConfusionCounts) -> MetricReport:
    """Precision/recall/F1 per class plus accuracy. Zero denominators yield a flagged 0."""
    if counts.total == 0:
        raise DataError("empty confusion table")
    wp, wr, wf, wflags = _prf(counts.tp, counts.fp, counts.fn)
    bp, br, bf, bflags = _prf(counts.tn, counts.fn, counts.fp)
    return MetricReport(
        counts=counts,
        waste=ClassMetrics(wp, wr, wf, counts.tp + counts.fn, wflags),
        background=ClassMetrics(bp, br, bf, counts.tn + counts.fp, bflags),
        accuracy=(counts.tp + counts.tn) / counts.total,
    )


def average_ranks(values) -> np.ndarray:
    """1-based ranks with ties assigned their group mean."""
    v = np.asarray(values, dtype=np.float64)
    order = np.argsort(v, kind="mergesort")
    sv = v[order]
    _, starts, counts = np.unique(sv, return_index=True, return_counts=True)
    avg = starts + (counts - 1) / 2.0 + 1.0
    ranks = np.empty(v.size, dtype=np.float64)
    ranks[order] = np.repeat(avg, counts)
    return ranks


def roc_auc(scores, truth) -> float:
    """P(score_pos > score_neg) + 0.5 P(tie) via rank sums."""
    scores = np.asarray(scores, dtype=np.float64)
    pos = np.asarray(truth, dtype=bool)
    if scores.shape != pos.shape:
        raise JoinError(f"scores/truth length mismatch: {scores.shape} vs {pos.shape}")
    n_pos = int(pos.sum())
    n_neg = pos.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DataError("ROC AUC undefined: truth contains a single class")
    ranks = average_ranks(scores)
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


@dataclass
class BootstrapCurve:
    sizes: list[int]
    replicates: int
    seed: int
    point_estimates: dict  # metric -> float on the full set
    stats: dict  # metric -> {"mean": [...], "std": [...], "p2.5": [...], "p97.5": [...]}
    balance: tuple[int, int]  # full-set (n_pos, n_neg)

    def mean_curve(self, metric: str) -> list[float]:
        return self.stats[metric]["mean"]


METRICS = ("f1", "roc_auc", "accuracy")


def _point_metrics(scores: np.ndarray, pos: np.ndarray) -> dict:
    pred = scores > 0.5
    tp = int(np.sum(pred & pos))
    fp = int(np.sum(pred & ~pos))
    fn = int(np.sum(~pred & pos))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return {
        "f1": f1,
        "roc_auc": roc_auc(scores, pos),
        "accuracy": float(np.mean(pred == pos)),
    }


def stratified_subsample(
    rng: np.random.Generator, pos_idx: np.ndarray, neg_idx: np.ndarray, size: int, n: int
) -> np.ndarray:
    """Indices of a class-balance-preserving subsample without replacement."""
    k_pos = round(size * pos_idx.size / n)
    k_pos = min(max(k_pos, 0), pos_idx.size)
    k_neg = size - k_pos
    take_pos = rng.choice(pos_idx, size=k_pos, replace=False)
    take_neg = rng.choice(neg_idx, size=k_neg, replace=False)
    # a subsample is a set; sorted order keeps float summation order canonical,
    # so the full-size resample reproduces the point estimate bit for bit
    return np.sort(np.concatenate([take_pos, take_neg]))


def bootstrap_curves(
    scores,
    truth,
    sizes,
    replicates: int = 200,
    seed: int = 7,
) -> BootstrapCurve:
    """Metric stability across test-set sizes under stratified subsampling."""
    scores = np.asarray(scores, dtype=np.float64)
    pos = np.asarray(truth, dtype=bool)
    n = scores.size
    if replicates < 1:
        raise ConfigError(f"replicates must be >= 1, got {replicates}")
    sizes = sorted(int(s) for s in sizes)
    if len(set(sizes)) != len(sizes):
        raise ConfigError("sizes must be strictly increasing")
    pos_idx = np.flatnonzero(pos)
    neg_idx = np.flatnonzero(~pos)
    for s in sizes:
        if s > n:
            raise DataError(f"size {s} exceeds the test-set size {n}")
        k_pos = round(s * pos_idx.size / n)
        if k_pos < 2 or s - k_pos < 2:
            raise DataError(f"size {s} leaves fewer than 2 samples in a class")

    stats = {m: {"mean": [], "std": [], "p2.5": [], "p97.5": []} for m in METRICS}
    for si, s in enumerate(sizes):
        values = {m: np.empty(replicates) for m in METRICS}
        for ri in range(replicates):
            rng = np.random.default_rng([seed, si, ri])
            take = stratified_subsample(rng, pos_idx, neg_idx, s, n)
            m = _point_metrics(scores[take], pos[take])
            for name in METRICS:
                values[name][ri] = m[name]
        for name in METRICS:
            arr = values[name]
            if np.all(arr == arr[0]):
                # identical replicates: mean is exactly that value, dispersion
                # exactly zero (float summation would smear the last ulp)
                v = float(arr[0])
                stats[name]["mean"].append(v)
                stats[name]["std"].append(0.0)
                stats[name]["p2.5"].append(v)
                stats[name]["p97.5"].append(v)
                continue
            stats[name]["mean"].append(float(arr.mean()))
            stats[name]["std"].append(float(arr.std()))
            stats[name]["p2.5"].append(float(np.percentile(arr, 2.5)))
            stats[name]["p97.5"].append(float(np.percentile(arr, 97.5)))

    return BootstrapCurve(
        sizes=sizes,
        replicates=replicates,
        seed=seed,
        point_estimates=_point_metrics(scores, pos),
        stats=stats,
        balance=(int(pos_idx.size), int(neg_idx.size)),
    )


@dataclass
class RegionF1Row:
    region_id: str
    f1: float | None
    n: int
    flagged: bool  # single-class truth; excluded from the summary


def per_region_f1(predictions: dict, truth: dict, regions: dict) -> tuple[list[RegionF1Row], dict]:
    """Waste-class F1 per region plus min/max/std summary over unflagged regions."""
    missing = [k for k in truth if k not in regions]
    if missing:
        raise DataError(f"{len(missing)} tiles lack a region assignment, e.g. {missing[:3]}")
    by_region: dict = {}
    for key, t in truth.items():
        by_region.setdefault(regions[key], []).append(key)

    rows: list[RegionF1Row] = []
    for region_id, keys in sorted(by_region.items()):
        t_labels = {k: truth[k] for k in keys}
        p_labels = {k: predictions[k] for k in keys if k in predictions}
        if set(p_labels) != set(t_labels):
            raise JoinError(f"region {region_id}: predictions do not cover all truth tiles")
        classes = set(t_labels.values())
        if len(classes) < 2:
            rows.append(RegionF1Row(region_id, None, len(keys), True))
            continue
        counts = confusion(p_labels, t_labels)
        rows.append(RegionF1Row(region_id, prf1(counts).waste.f1, len(keys), False))

    usable = [r.f1 for r in rows if not r.flagged]
    summary = {
        "n_regions": len(rows),
        "n_flagged": sum(r.flagged for r in rows),
        "min": min(usable) if usable else None,
        "max": max(usable) if usable else None,
        "std": float(np.std(usable)) if usable else None,
    }
    return rows, summary


# --- report output ---------------------------------------------------------


def report_to_dict(report: MetricReport) -> dict:
    return {
        "counts": {
            "tp": report.counts.tp,
            "fp": report.counts.fp,
            "fn": report.counts.fn,
            "tn": report.counts.tn,
        },
        "accuracy": report.accuracy,
        "waste": {
            "precision": report.waste.precision,
            "recall": report.waste.recall,
            "f1": report.waste.f1,
            "support": report.waste.support,
            "zero_division_flags": report.waste.zero_division_flags,
        },
        "background": {
            "precision": report.background.precision,
            "recall": report.background.recall,
            "f1": report.background.f1,
            "support": report.background.support,
            "zero_division_flags": report.background.zero_division_flags,
        },
    }


def write_report_json(report: MetricReport, path: str | Path, extra: dict | None = None) -> str:
    doc = report_to_dict(report)
    if extra:
        doc.update(extra)
    with open(path, "w") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
        f.write("\n")
    return str(path)


def report_to_markdown(report: MetricReport) -> str:
    d = report_to_dict(report)
    lines = [
        "| class | precision | recall | F1 | support |",
        "|---|---|---|---|---|",
    ]
    for cls in (POSITIVE, NEGATIVE):
        m = d[cls]
        lines.append(
            f"| {cls} | {m['precision']:.4f} | {m['recall']:.4f} | "
            f"{m['f1']:.4f} | {m['support']} |"
        )
    lines.append("")
    lines.append(f"accuracy: {d['accuracy']:.4f}  (n={report.counts.total})")
    return "\n".join(lines) + "\n"


def write_curve_csv(curve: BootstrapCurve, path: str | Path) -> str:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["size", "metric", "mean", "std", "p2.5", "p97.5"])
        for metric in METRICS:
            st = curve.stats[metric]
            for i, size in enumerate(curve.sizes):
                w.writerow(
                    [
                        size,
                        metric,
                        repr(st["mean"][i]),
                        repr(st["std"][i]),
                        repr(st["p2.5"][i]),
                        repr(st["p97.5"][i]),
                    ]
                )
    return str(path)
