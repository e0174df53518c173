# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled box kernels: pairwise IoU, greedy NMS, greedy GT matching.

Must stay output-identical to ``rgbdet.boxops.reference`` (same tie-breaking
and threshold strictness); the equivalence tests enforce this.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()


cdef inline double _area(double x0, double y0, double x1, double y1) nogil:
    cdef double w = x1 - x0
    cdef double h = y1 - y0
    if w < 0.0:
        w = 0.0
    if h < 0.0:
        h = 0.0
    return w * h


cdef inline double _iou(const double[:, ::1] a, Py_ssize_t i,
                        const double[:, ::1] b, Py_ssize_t j) nogil:
    cdef double ix0 = a[i, 0] if a[i, 0] > b[j, 0] else b[j, 0]
    cdef double iy0 = a[i, 1] if a[i, 1] > b[j, 1] else b[j, 1]
    cdef double ix1 = a[i, 2] if a[i, 2] < b[j, 2] else b[j, 2]
    cdef double iy1 = a[i, 3] if a[i, 3] < b[j, 3] else b[j, 3]
    cdef double iw = ix1 - ix0
    cdef double ih = iy1 - iy0
    if iw < 0.0:
        iw = 0.0
    if ih < 0.0:
        ih = 0.0
    cdef double inter = iw * ih
    cdef double union_ = (_area(a[i, 0], a[i, 1], a[i, 2], a[i, 3])
                          + _area(b[j, 0], b[j, 1], b[j, 2], b[j, 3]) - inter)
    if union_ > 0.0:
        return inter / union_
    return 0.0


def iou_matrix(const double[:, ::1] boxes_a, const double[:, ::1] boxes_b):
    """Pairwise IoU, shape (len(a), len(b))."""
    cdef Py_ssize_t n = boxes_a.shape[0]
    cdef Py_ssize_t m = boxes_b.shape[0]
    out_arr = np.empty((n, m), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j
    with nogil:
        for i in range(n):
            for j in range(m):
                out[i, j] = _iou(boxes_a, i, boxes_b, j)
    return out_arr


def nms_indices(const double[:, ::1] boxes, const double[::1] scores, double iou_threshold):
    """Kept indices in processing order (score desc, ties by index asc)."""
    cdef Py_ssize_t n = boxes.shape[0]
    if n == 0:
        return np.empty(0, dtype=np.int64)
    order_arr = np.argsort(np.negative(np.asarray(scores)), kind="stable").astype(np.int64)
    cdef long long[::1] order = order_arr
    suppressed_arr = np.zeros(n, dtype=np.uint8)
    cdef unsigned char[::1] suppressed = suppressed_arr
    keep_arr = np.empty(n, dtype=np.int64)
    cdef long long[::1] keep = keep_arr
    cdef Py_ssize_t n_keep = 0
    cdef Py_ssize_t oi, oj
    cdef Py_ssize_t idx, other
    with nogil:
        for oi in range(n):
            idx = <Py_ssize_t> order[oi]
            if suppressed[idx]:
                continue
            keep[n_keep] = idx
            n_keep += 1
            suppressed[idx] = 1
            for oj in range(oi + 1, n):
                other = <Py_ssize_t> order[oj]
                if suppressed[other]:
                    continue
                if _iou(boxes, idx, boxes, other) > iou_threshold:
                    suppressed[other] = 1
    return keep_arr[:n_keep].copy()


def greedy_match(const double[:, ::1] pred_boxes, const double[:, ::1] gt_boxes,
                 double iou_threshold):
    """Per-prediction matched GT index (or -1), predictions taken in order."""
    cdef Py_ssize_t n = pred_boxes.shape[0]
    cdef Py_ssize_t m = gt_boxes.shape[0]
    out_arr = np.full(n, -1, dtype=np.int64)
    if n == 0 or m == 0:
        return out_arr
    cdef long long[::1] out = out_arr
    matched_arr = np.zeros(m, dtype=np.uint8)
    cdef unsigned char[::1] matched = matched_arr
    cdef Py_ssize_t i, j, best_j
    cdef double v, best_iou
    with nogil:
        for i in range(n):
            best_j = -1
            best_iou = -1.0
            for j in range(m):
                if matched[j]:
                    continue
                v = _iou(pred_boxes, i, gt_boxes, j)
                if v >= iou_threshold and v > best_iou:
                    best_iou = v
                    best_j = j
            if best_j >= 0:
                matched[best_j] = 1
                out[i] = best_j
    return out_arr
