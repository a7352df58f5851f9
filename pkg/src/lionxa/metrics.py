"""Confusion matrices, IoU, ensembling and domain-gap statistics."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateGap, EmptyMatrix, ShapeError
from .lidar_io import IGNORE


@dataclass(eq=False)
class ConfusionMatrix:
    counts: np.ndarray  # (C, C) int64, rows = ground truth, cols = prediction

    @classmethod
    def zeros(cls, num_classes):
        return cls(np.zeros((num_classes, num_classes), dtype=np.int64))

    @property
    def num_classes(self):
        return self.counts.shape[0]

    @property
    def total(self):
        return int(self.counts.sum())

    def __add__(self, other):
        return ConfusionMatrix(self.counts + other.counts)

    def __eq__(self, other):
        return isinstance(other, ConfusionMatrix) and np.array_equal(self.counts, other.counts)


def accumulate(cm: ConfusionMatrix, predictions, labels) -> ConfusionMatrix:
    pred = np.asarray(predictions, dtype=np.int64).reshape(-1)
    gt = np.asarray(labels, dtype=np.int64).reshape(-1)
    if pred.shape != gt.shape:
        raise ShapeError(f"{pred.shape[0]} predictions vs {gt.shape[0]} labels")
    keep = gt != IGNORE
    c = cm.num_classes
    flat = gt[keep] * c + pred[keep]
    return ConfusionMatrix(cm.counts + np.bincount(flat, minlength=c * c).reshape(c, c))


def iou(cm: ConfusionMatrix):
    """Per-class IoU (nan where the union is empty) and the mIoU over the rest."""
    if cm.total == 0:
        raise EmptyMatrix("confusion matrix is empty")
    tp = np.diag(cm.counts).astype(np.float64)
    union = cm.counts.sum(axis=0) + cm.counts.sum(axis=1) - tp
    with np.errstate(invalid="ignore", divide="ignore"):
        per_class = np.where(union > 0, tp / union, np.nan)
    return per_class, float(np.nanmean(per_class))


def ensemble(p2d, p3d):
    p2d, p3d = np.asarray(p2d, dtype=np.float64), np.asarray(p3d, dtype=np.float64)
    if p2d.shape != p3d.shape:
        raise ShapeError(f"ensemble: {p2d.shape} vs {p3d.shape}")
    return 0.5 * (p2d + p3d)


def domain_stats(baseline, method, oracle):
    """(unsupervised advantage, domain gap, closed gap in percent)."""
    gap = oracle - baseline
    if gap == 0:
        raise DegenerateGap("oracle equals baseline")
    adv = method - baseline
    return adv, gap, 100.0 * adv / gap


# ---------------------------------------------------------------- reports

MODALITIES = ("2d", "3d", "2d+3d")


def report(matrices: dict, class_names, stats: dict | None = None) -> dict:
    """Structured report from one confusion matrix per modality."""
    out = {"classes": list(class_names), "modalities": {}}
    for mod, cm in matrices.items():
        per_class, miou = iou(cm)
        out["modalities"][mod] = {
            "miou": 100.0 * miou,
            "iou": {n: (None if np.isnan(v) else 100.0 * float(v)) for n, v in zip(class_names, per_class)},
            "points": cm.total,
        }
    if stats:
        out["domain_stats"] = stats
    return out


def report_json(rep: dict) -> str:
    return json.dumps(rep, indent=2, sort_keys=True)


def report_csv(rep: dict) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["modality", "class", "iou"])
    for mod, body in rep["modalities"].items():
        for name in rep["classes"]:
            v = body["iou"][name]
            w.writerow([mod, name, "" if v is None else f"{v:.4f}"])
        w.writerow([mod, "mIoU", f"{body['miou']:.4f}"])
    return buf.getvalue()


def stats_table(rows: dict) -> dict:
    """domain_stats per modality from {modality: (baseline, method, oracle)}."""
    out = {}
    for mod, (b, m, o) in rows.items():
        adv, gap, closed = domain_stats(b, m, o)
        out[mod] = {"baseline": b, "method": m, "oracle": o,
                    "advantage": adv, "gap": gap, "closed_gap": closed}
    return out


def stats_csv(table: dict) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    cols = ["baseline", "method", "oracle", "advantage", "gap", "closed_gap"]
    w.writerow(["modality"] + cols)
    for mod, row in table.items():
        w.writerow([mod] + [f"{row[c]:.4f}" for c in cols])
    return buf.getvalue()
