"""Box post-processing kernels with a compiled fast path.

At import time this package selects the Cython extension
(``rgbdet.boxops._kernels``) when it is importable, else the pure-numpy
fallback (``rgbdet.boxops.reference``).  Both implement identical semantics;
set ``RGBDET_DISABLE_EXT=1`` to force the fallback.  The active route is
reported by :func:`backend_name`, and ``benchmarks/bench_boxops.py``
compares the two.

Public kernels (boxes are ``[x_min, y_min, x_max, y_max]`` rows):

* ``iou_matrix(a, b)`` -- pairwise IoU, (N, M) float64.
* ``nms_indices(boxes, scores, iou_threshold)`` -- greedy NMS; kept indices
  in processing order (score desc, ties by index asc); suppression is
  strictly-above-threshold.
* ``greedy_match(pred_boxes, gt_boxes, iou_threshold)`` -- per-prediction
  matched GT index or -1; predictions taken in the given order, each takes
  the highest-IoU unmatched GT at-or-above threshold (ties: lowest index).
"""

from __future__ import annotations

import os

import numpy as np

from . import reference

if os.environ.get("RGBDET_DISABLE_EXT", "") in ("", "0"):
    try:
        from . import _kernels as _impl

        _BACKEND = "compiled"
    except ImportError:
        _impl = reference
        _BACKEND = "python"
else:
    _impl = reference
    _BACKEND = "python"


def backend_name() -> str:
    """Which kernel route is active: ``"compiled"`` or ``"python"``."""
    return _BACKEND


def _as_boxes(x: np.ndarray, name: str) -> np.ndarray:
    arr = np.ascontiguousarray(x, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 4:
        if arr.size == 0:
            return np.zeros((0, 4), dtype=np.float64)
        raise ValueError(f"{name} must be (N, 4), got shape {arr.shape}")
    if arr.size and not np.isfinite(arr).all():
        raise ValueError(f"{name} contains non-finite values")
    return arr


def iou_matrix(boxes_a: np.ndarray, boxes_b: np.ndarray) -> np.ndarray:
    a = _as_boxes(boxes_a, "boxes_a")
    b = _as_boxes(boxes_b, "boxes_b")
    return np.asarray(_impl.iou_matrix(a, b))


def nms_indices(boxes: np.ndarray, scores: np.ndarray, iou_threshold: float) -> np.ndarray:
    b = _as_boxes(boxes, "boxes")
    s = np.ascontiguousarray(scores, dtype=np.float64)
    if s.ndim != 1 or s.shape[0] != b.shape[0]:
        raise ValueError(f"scores must be ({b.shape[0]},), got shape {s.shape}")
    if s.size and not np.isfinite(s).all():
        raise ValueError("scores contain non-finite values")
    if not 0.0 <= iou_threshold <= 1.0:
        raise ValueError(f"iou_threshold must be in [0, 1], got {iou_threshold}")
    return np.asarray(_impl.nms_indices(b, s, float(iou_threshold)))


def greedy_match(pred_boxes: np.ndarray, gt_boxes: np.ndarray, iou_threshold: float) -> np.ndarray:
    p = _as_boxes(pred_boxes, "pred_boxes")
    g = _as_boxes(gt_boxes, "gt_boxes")
    if not 0.0 <= iou_threshold <= 1.0:
        raise ValueError(f"iou_threshold must be in [0, 1], got {iou_threshold}")
    return np.asarray(_impl.greedy_match(p, g, float(iou_threshold)))
