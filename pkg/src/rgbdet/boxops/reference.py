"""Pure-numpy box kernels: pairwise IoU, greedy NMS, greedy GT matching.

This is the fallback backend for :mod:`rgbdet.boxops` and the behavioral
reference the compiled kernels must match bit-for-bit, including
tie-breaking:

* NMS processes boxes by descending score, ties by ascending index, and
  suppresses boxes with IoU *strictly above* the threshold.
* Matching processes predictions in the given order; each takes the
  unmatched GT with the highest IoU *at or above* the threshold, ties by
  lowest GT index.

Boxes are (N, 4) float64 ``[x_min, y_min, x_max, y_max]``.  Degenerate
boxes have zero area and IoU 0 against everything.
"""

from __future__ import annotations

import numpy as np


def iou_matrix(boxes_a: np.ndarray, boxes_b: np.ndarray) -> np.ndarray:
    """Pairwise IoU, shape (len(a), len(b))."""
    ax0, ay0, ax1, ay1 = boxes_a[:, 0], boxes_a[:, 1], boxes_a[:, 2], boxes_a[:, 3]
    bx0, by0, bx1, by1 = boxes_b[:, 0], boxes_b[:, 1], boxes_b[:, 2], boxes_b[:, 3]
    iw = np.clip(np.minimum(ax1[:, None], bx1[None, :]) - np.maximum(ax0[:, None], bx0[None, :]), 0.0, None)
    ih = np.clip(np.minimum(ay1[:, None], by1[None, :]) - np.maximum(ay0[:, None], by0[None, :]), 0.0, None)
    inter = iw * ih
    area_a = np.clip(ax1 - ax0, 0.0, None) * np.clip(ay1 - ay0, 0.0, None)
    area_b = np.clip(bx1 - bx0, 0.0, None) * np.clip(by1 - by0, 0.0, None)
    union = area_a[:, None] + area_b[None, :] - inter
    with np.errstate(invalid="ignore", divide="ignore"):
        iou = np.where(union > 0.0, inter / union, 0.0)
    return iou


def nms_indices(boxes: np.ndarray, scores: np.ndarray, iou_threshold: float) -> np.ndarray:
    """Kept indices in processing order (score desc, ties by index asc)."""
    n = boxes.shape[0]
    if n == 0:
        return np.empty(0, dtype=np.int64)
    order = np.argsort(-scores, kind="stable")
    suppressed = np.zeros(n, dtype=bool)
    keep: list[int] = []
    ious = iou_matrix(boxes, boxes)
    for idx in order:
        if suppressed[idx]:
            continue
        keep.append(int(idx))
        suppressed |= ious[idx] > iou_threshold
        suppressed[idx] = True  # self-overlap; already kept
    return np.asarray(keep, dtype=np.int64)


def greedy_match(pred_boxes: np.ndarray, gt_boxes: np.ndarray, iou_threshold: float) -> np.ndarray:
    """Per-prediction matched GT index (or -1), predictions taken in order."""
    n, m = pred_boxes.shape[0], gt_boxes.shape[0]
    out = np.full(n, -1, dtype=np.int64)
    if n == 0 or m == 0:
        return out
    ious = iou_matrix(pred_boxes, gt_boxes)
    matched = np.zeros(m, dtype=bool)
    for i in range(n):
        best_j = -1
        best_iou = -1.0
        row = ious[i]
        for j in range(m):
            if matched[j]:
                continue
            v = row[j]
            if v >= iou_threshold and v > best_iou:
                best_iou = v
                best_j = j
        if best_j >= 0:
            matched[best_j] = True
            out[i] = best_j
    return out
