"""Box kernels: oracle agreement, tie-breaking, backend equivalence."""

from __future__ import annotations

import importlib

import numpy as np
import pytest

from conftest import clustered_boxes, random_boxes
from oracles import IOU_UNIT_OVERLAP, greedy_match_scalar, iou_matrix_scalar, nms_scalar
from rgbdet import boxops
from rgbdet.boxops import reference


def test_backend_reports_route():
    assert boxops.backend_name() in ("compiled", "python")


def test_iou_hand_values():
    a = np.array([[0.0, 0.0, 2.0, 2.0]])
    b = np.array([[1.0, 1.0, 3.0, 3.0]])
    assert abs(boxops.iou_matrix(a, b)[0, 0] - IOU_UNIT_OVERLAP) < 1e-15
    assert boxops.iou_matrix(a, a)[0, 0] == 1.0
    disjoint = np.array([[5.0, 5.0, 6.0, 6.0]])
    assert boxops.iou_matrix(a, disjoint)[0, 0] == 0.0
    touching = np.array([[2.0, 0.0, 4.0, 2.0]])  # shares an edge only
    assert boxops.iou_matrix(a, touching)[0, 0] == 0.0


def test_iou_matrix_matches_oracle():
    rng = np.random.default_rng(0)
    for n, m in [(1, 1), (7, 3), (20, 20), (0, 5), (5, 0)]:
        a = random_boxes(rng, n)
        b = random_boxes(rng, m)
        got = boxops.iou_matrix(a, b)
        assert got.shape == (n, m)
        assert np.allclose(got, iou_matrix_scalar(a, b), atol=1e-13, rtol=0)


def test_degenerate_boxes_have_zero_iou():
    degen = np.array([[3.0, 3.0, 3.0, 8.0]])  # zero width
    other = np.array([[0.0, 0.0, 10.0, 10.0]])
    assert reference.iou_matrix(degen, other)[0, 0] == 0.0
    assert reference.iou_matrix(degen, degen)[0, 0] == 0.0


def test_nms_matches_oracle_including_ties():
    rng = np.random.default_rng(1)
    for trial in range(100):
        n = int(rng.integers(0, 25))
        boxes = clustered_boxes(rng, n)
        scores = rng.random(n)
        if trial % 3 == 0:
            scores = np.round(scores, 1)  # force score ties
        thr = float(rng.choice([0.3, 0.5, 0.7]))
        got = boxops.nms_indices(boxes, scores, thr)
        assert got.tolist() == nms_scalar(boxes, scores, thr)


def test_greedy_match_matches_oracle():
    rng = np.random.default_rng(2)
    for _ in range(100):
        n = int(rng.integers(0, 12))
        m = int(rng.integers(0, 6))
        pred = clustered_boxes(rng, n)
        gt = clustered_boxes(rng, m)
        thr = float(rng.choice([0.1, 0.5, 0.75]))
        got = boxops.greedy_match(pred, gt, thr)
        assert got.tolist() == greedy_match_scalar(pred, gt, thr)


def test_greedy_match_each_gt_claimed_once():
    pred = np.array([[0, 0, 10, 10], [0, 0, 10, 10], [0, 0, 10, 10]], dtype=np.float64)
    gt = np.array([[0, 0, 10, 10], [1, 1, 11, 11]], dtype=np.float64)
    matched = boxops.greedy_match(pred, gt, 0.5)
    assert matched[0] == 0  # exact overlap, ties broken toward lowest index
    assert matched[1] == 1  # next prediction takes the remaining GT
    assert matched[2] == -1  # nothing left


def test_input_validation():
    good = np.zeros((2, 4))
    with pytest.raises(ValueError, match="must be \\(N, 4\\)"):
        boxops.iou_matrix(np.zeros((2, 3)), good)
    with pytest.raises(ValueError, match="non-finite"):
        boxops.iou_matrix(np.array([[0.0, 0.0, np.nan, 1.0]]), good)
    with pytest.raises(ValueError, match="scores must be"):
        boxops.nms_indices(good, np.zeros(3), 0.5)
    with pytest.raises(ValueError, match="non-finite"):
        boxops.nms_indices(good, np.array([np.inf, 0.0]), 0.5)
    with pytest.raises(ValueError, match="iou_threshold"):
        boxops.nms_indices(good, np.zeros(2), 1.5)
    with pytest.raises(ValueError, match="iou_threshold"):
        boxops.greedy_match(good, good, -0.1)


def test_empty_inputs():
    empty = np.zeros((0, 4))
    assert boxops.iou_matrix(empty, empty).shape == (0, 0)
    assert boxops.nms_indices(empty, np.zeros(0), 0.5).size == 0
    assert boxops.greedy_match(empty, np.zeros((3, 4)), 0.5).size == 0


def test_compiled_backend_matches_reference_exactly():
    spec = importlib.util.find_spec("rgbdet.boxops._kernels")
    if spec is None:
        pytest.skip("compiled kernels not built")
    from rgbdet.boxops import _kernels

    rng = np.random.default_rng(3)
    for _ in range(50):
        n = int(rng.integers(1, 40))
        m = int(rng.integers(1, 15))
        boxes = np.ascontiguousarray(clustered_boxes(rng, n))
        gts = np.ascontiguousarray(clustered_boxes(rng, m))
        scores = np.round(rng.random(n), 2)
        thr = float(rng.choice([0.25, 0.5, 0.8]))
        assert np.array_equal(
            np.asarray(_kernels.iou_matrix(boxes, gts)), reference.iou_matrix(boxes, gts)
        )
        assert np.array_equal(
            np.asarray(_kernels.nms_indices(boxes, scores, thr)),
            reference.nms_indices(boxes, scores, thr),
        )
        assert np.array_equal(
            np.asarray(_kernels.greedy_match(boxes, gts, thr)),
            reference.greedy_match(boxes, gts, thr),
        )
