"""Detection evaluation: greedy matching, average precision, CSV reports.

Matching (per frame, per class, per IoU threshold): predictions are sorted
by descending score (ties keep input order) and each greedily claims the
unmatched ground-truth box of the same class with the highest IoU *at or
above* the threshold; every prediction becomes exactly one TP or FP and each
GT matches at most once.

AP pools the (score, TP) pairs of all frames, re-sorts globally by score,
and integrates the precision-recall curve.  The default integrator samples
the precision envelope at the 101 recall points {0.00, 0.01, ..., 1.00};
``method="allpoint"`` integrates the exact envelope instead.  Dataset
metrics macro-average over the classes present in the ground truth:
``ap50`` is the macro AP at IoU 0.50 and ``ap`` additionally averages over
thresholds {0.50, 0.55, ..., 0.95}.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import boxops
from .data import BBox
from .detector import Detection

COCO_THRESHOLDS: tuple[float, ...] = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))


def iou(a: BBox, b: BBox) -> float:
    """IoU of two boxes (validated non-degenerate by construction)."""
    return float(boxops.iou_matrix(a.as_array()[None, :], b.as_array()[None, :])[0, 0])


def match_detections(
    detections: list[Detection], gts: list[BBox], iou_threshold: float
) -> tuple[np.ndarray, np.ndarray, int]:
    """Greedy same-class matching for one frame.

    Returns ``(scores, tp_flags, num_gt)`` where ``scores`` are the
    detection scores sorted descending (ties by input order) and
    ``tp_flags[k]`` says whether the k-th of those matched a GT box.
    """
    num_gt = len(gts)
    if not detections:
        return np.empty(0, dtype=np.float64), np.empty(0, dtype=bool), num_gt
    order = np.argsort(-np.array([d.score for d in detections]), kind="stable")
    scores = np.array([detections[i].score for i in order], dtype=np.float64)
    flags = np.zeros(len(order), dtype=bool)
    by_class: dict[int, list[int]] = {}
    for k, i in enumerate(order):
        by_class.setdefault(detections[i].class_id, []).append(k)
    gt_by_class: dict[int, list[int]] = {}
    for j, g in enumerate(gts):
        gt_by_class.setdefault(g.class_id, []).append(j)
    for cls, det_ks in by_class.items():
        gt_js = gt_by_class.get(cls, [])
        if not gt_js:
            continue
        pred_boxes = np.array([detections[order[k]].box.as_array() for k in det_ks])
        gt_boxes = np.array([gts[j].as_array() for j in gt_js])
        matched = boxops.greedy_match(pred_boxes, gt_boxes, iou_threshold)
        for k, m in zip(det_ks, matched):
            flags[k] = m >= 0
    return scores, flags, num_gt


def average_precision(
    scores: np.ndarray, tp_flags: np.ndarray, num_gt: int, method: str = "101pt"
) -> float:
    """AP from pooled (score, TP) pairs; ``num_gt`` is the total GT count.

    ``scores`` need not be pre-sorted.  With no ground truth the AP is 0.
    """
    if method not in ("101pt", "allpoint"):
        raise ValueError(f"unknown AP method {method!r}")
    if num_gt <= 0 or scores.size == 0:
        return 0.0
    order = np.argsort(-scores, kind="stable")
    flags = np.asarray(tp_flags, dtype=bool)[order]
    tp = np.cumsum(flags)
    fp = np.cumsum(~flags)
    recall = tp / num_gt
    precision = tp / (tp + fp)
    # Precision envelope: best precision achievable at >= each recall level.
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    if method == "101pt":
        points = np.linspace(0.0, 1.0, 101)
        idx = np.searchsorted(recall, points, side="left")
        sampled = np.where(idx < len(envelope), envelope[np.minimum(idx, len(envelope) - 1)], 0.0)
        return float(sampled.mean())
    # allpoint: integrate the envelope over exact recall increments.
    r_prev = np.concatenate([[0.0], recall])
    return float(np.sum((recall - r_prev[:-1]) * envelope))


@dataclass(frozen=True)
class EvalResult:
    """Macro metrics plus the per-class / per-threshold AP table."""

    ap50: float
    ap: float  # mean over thresholds 0.50..0.95 of the macro AP
    per_class: dict[int, dict[float, float]]
    num_gt_per_class: dict[int, int]
    thresholds: tuple[float, ...]


FrameKey = tuple[str, int]


def evaluate(
    detections: dict[FrameKey, list[Detection]],
    ground_truth: dict[FrameKey, list[BBox]],
    thresholds: tuple[float, ...] = COCO_THRESHOLDS,
    method: str = "101pt",
) -> EvalResult:
    """Dataset AP over pooled frames.

    Frames are taken from the union of both mappings (a frame with no entry
    contributes no detections / no GT).  Classes are those present in the
    ground truth; with no GT anywhere the macro metrics are 0.
    """
    frames = sorted(set(detections) | set(ground_truth))
    classes = sorted({b.class_id for boxes in ground_truth.values() for b in boxes})
    per_class: dict[int, dict[float, float]] = {}
    num_gt_per_class = {
        c: sum(1 for boxes in ground_truth.values() for b in boxes if b.class_id == c)
        for c in classes
    }
    for c in classes:
        per_class[c] = {}
        for t in thresholds:
            pooled_scores: list[np.ndarray] = []
            pooled_flags: list[np.ndarray] = []
            total_gt = 0
            for key in frames:
                dets = [d for d in detections.get(key, []) if d.class_id == c]
                gts = [b for b in ground_truth.get(key, []) if b.class_id == c]
                scores, flags, num_gt = match_detections(dets, gts, t)
                pooled_scores.append(scores)
                pooled_flags.append(flags)
                total_gt += num_gt
            scores = np.concatenate(pooled_scores) if pooled_scores else np.empty(0)
            flags = np.concatenate(pooled_flags) if pooled_flags else np.empty(0, dtype=bool)
            per_class[c][t] = average_precision(scores, flags, total_gt, method=method)
    if classes:
        ap50 = float(np.mean([per_class[c][0.5] for c in classes])) if 0.5 in thresholds else 0.0
        ap = float(np.mean([per_class[c][t] for c in classes for t in thresholds]))
    else:
        ap50, ap = 0.0, 0.0
    return EvalResult(
        ap50=ap50, ap=ap, per_class=per_class, num_gt_per_class=num_gt_per_class, thresholds=thresholds
    )


def write_metrics_csv(result: EvalResult, path: str | Path, dataset: str, split: str) -> None:
    """Per-class/threshold rows plus ``all``-class summary rows."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["dataset", "split", "class", "threshold", "ap"])
        for c in sorted(result.per_class):
            for t in result.thresholds:
                writer.writerow([dataset, split, c, f"{t:.2f}", f"{result.per_class[c][t]:.6f}"])
        writer.writerow([dataset, split, "all", "0.50", f"{result.ap50:.6f}"])
        lo, hi = result.thresholds[0], result.thresholds[-1]
        writer.writerow([dataset, split, "all", f"{lo:.2f}:{hi:.2f}", f"{result.ap:.6f}"])
