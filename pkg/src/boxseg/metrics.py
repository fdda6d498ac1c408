"""Instance-mask evaluation: IoU@k, class-balanced mean IoU (mIoU*), and
class-wise mask AP with 101-point interpolation."""

from __future__ import annotations

import json
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .geometry import mask_iou

IOU_KS = (0.5, 0.75)
AP_THRESHOLDS = (0.25, 0.5, 0.7, 0.75)


@dataclass
class InstanceRecord:
    class_label: str
    gt_mask: np.ndarray
    pred_mask: np.ndarray
    score: float = 1.0
    image_id: Optional[str] = None

    @property
    def iou(self) -> float:
        return mask_iou(self.pred_mask, self.gt_mask)


@dataclass
class MetricsReport:
    miou_star: float
    iou_at: dict
    ap_at: dict
    per_class: dict = field(default_factory=dict)
    count: int = 0

    def to_dict(self) -> dict:
        return {
            "count": self.count,
            "miou_star": self.miou_star,
            "iou_at": {f"{k:.2f}": v for k, v in self.iou_at.items()},
            "ap_at": {f"{k:.2f}": v for k, v in self.ap_at.items()},
            "per_class": self.per_class,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    def to_table(self) -> str:
        cols = ["mIoU*"] + [f"IoU@{int(round(k * 100))}" for k in self.iou_at] + \
               [f"AP@{int(round(t * 100))}" for t in self.ap_at]
        vals = [100.0 * self.miou_star] + list(self.iou_at.values()) + \
               [100.0 * v for v in self.ap_at.values()]
        head = " | ".join(f"{c:>7}" for c in cols)
        body = " | ".join(f"{v:7.1f}" for v in vals)
        return f"{head}\n{'-' * len(head)}\n{body}\n"


def _ious(records) -> np.ndarray:
    return np.array([r.iou for r in records], dtype=np.float64)


def iou_at_k(records: Sequence[InstanceRecord], k: float) -> float:
    """Percentage of instances whose mask IoU is strictly above ``k``."""
    if not records:
        raise ValueError("iou_at_k: no records")
    return 100.0 * float(np.mean(_ious(records) > k))


def miou_star(records: Sequence[InstanceRecord]) -> float:
    """Mean over classes of the per-class mean instance IoU."""
    if not records:
        raise ValueError("miou_star: no records")
    by_class = defaultdict(list)
    for r in records:
        by_class[r.class_label].append(r.iou)
    return float(np.mean([np.mean(v) for _, v in sorted(by_class.items())]))


def interpolated_ap(tp: Sequence[bool], n_gt: int, points: int = 101) -> float:
    """AP of a score-sorted TP/FP sequence, precision sampled at ``points`` recall levels."""
    if n_gt == 0:
        return 0.0
    tp = np.asarray(tp, dtype=bool)
    if tp.size == 0:
        return 0.0
    ctp = np.cumsum(tp)
    precision = ctp / np.arange(1, tp.size + 1)
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    # level k/(points-1) is reached once ctp/n_gt >= k/(points-1); integers avoid float ties
    idx = np.searchsorted(ctp * (points - 1), np.arange(points) * n_gt, side="left")
    sampled = np.where(idx < tp.size, envelope[np.minimum(idx, tp.size - 1)], 0.0)
    return float(sampled.mean())


def match_predictions(preds: Sequence[dict], gts: Sequence[dict], iou_threshold: float) -> list:
    """Greedy matching in descending score order; returns a TP flag per sorted prediction.

    ``preds`` items carry ``image_id``, ``mask``, ``score``; ``gts`` items carry
    ``image_id`` and ``mask``. Each GT is matched at most once, to the
    prediction that reaches it first with the highest IoU among unmatched GTs.
    """
    gt_by_image = defaultdict(list)
    for i, g in enumerate(gts):
        gt_by_image[g["image_id"]].append(i)
    taken = set()
    order = sorted(range(len(preds)), key=lambda i: -preds[i]["score"])
    flags = []
    for i in order:
        p = preds[i]
        best, best_iou = None, -1.0
        for j in gt_by_image.get(p["image_id"], []):
            if j in taken:
                continue
            iou = mask_iou(p["mask"], gts[j]["mask"])
            if iou >= iou_threshold and iou > best_iou:
                best, best_iou = j, iou
        if best is not None:
            taken.add(best)
        flags.append(best is not None)
    return flags


def average_precision(predictions: Sequence[dict], gts: Sequence[dict], iou_threshold: float) -> tuple:
    """Per-class AP and their mean over classes that have at least one GT.

    Items are dicts with ``image_id``, ``class``, ``mask`` (+ ``score`` for predictions).
    """
    classes = sorted({g["class"] for g in gts})
    per_class = {}
    for c in classes:
        cp = [p for p in predictions if p["class"] == c]
        cg = [g for g in gts if g["class"] == c]
        per_class[c] = interpolated_ap(match_predictions(cp, cg, iou_threshold), len(cg))
    m = float(np.mean(list(per_class.values()))) if per_class else 0.0
    return per_class, m


def evaluate(records: Sequence[InstanceRecord], ks=IOU_KS, thresholds=AP_THRESHOLDS) -> MetricsReport:
    """Full report for per-GT predictions (one prediction per GT instance)."""
    preds, gts = [], []
    for i, r in enumerate(records):
        image_id = r.image_id if r.image_id is not None else str(i)
        gts.append({"image_id": image_id, "class": r.class_label, "mask": r.gt_mask})
        if np.any(r.pred_mask):
            preds.append({"image_id": image_id, "class": r.class_label, "mask": r.pred_mask,
                          "score": r.score})
    ap_at, per_class = {}, defaultdict(dict)
    for t in thresholds:
        pc, m = average_precision(preds, gts, t)
        ap_at[t] = m
        for c, v in pc.items():
            per_class[c][f"ap@{t:.2f}"] = v
    by_class = defaultdict(list)
    for r in records:
        by_class[r.class_label].append(r)
    for c, rs in by_class.items():
        per_class[c]["miou"] = float(np.mean(_ious(rs)))
        per_class[c]["count"] = len(rs)
    return MetricsReport(miou_star(records), {k: iou_at_k(records, k) for k in ks}, ap_at,
                         dict(sorted(per_class.items())), len(records))
