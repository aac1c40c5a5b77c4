import math

import numpy as np
import pytest

from pyheadseg.exceptions import ShapeError
from pyheadseg.metrics import (
    ConfusionCounts,
    asd,
    both_empty,
    boundary,
    confusion,
    dice,
    hausdorff,
    iou,
    roc_pr_curves,
)


def random_pair(rng, size=16, density=None):
    p = density if density is not None else rng.uniform(0.1, 0.6)
    return (rng.random((size, size)) < p).astype(np.uint8), (rng.random((size, size)) < p).astype(np.uint8)


def boundary_oracle(mask):
    height, width = mask.shape
    points = []
    for y in range(height):
        for x in range(width):
            if not mask[y, x]:
                continue
            neighbours = [(y - 1, x), (y + 1, x), (y, x - 1), (y, x + 1)]
            if any(not (0 <= j < height and 0 <= i < width) or not mask[j, i] for j, i in neighbours):
                points.append((y, x))
    return points


def distances_oracle(a_points, b_points):
    return [min(math.dist(p, q) for q in b_points) for p in a_points]


def concordance_oracle(scores, labels):
    positives = scores[labels == 1]
    negatives = scores[labels == 0]
    wins = sum((p > n) + 0.5 * (p == n) for p in positives for n in negatives)
    return wins / (len(positives) * len(negatives))


class TestConfusion:
    def test_all_ones(self):
        ones = np.ones((4, 4), np.uint8)
        assert confusion(ones, ones) == ConfusionCounts(16, 0, 0, 0)

    def test_published_counts(self):
        counts = ConfusionCounts(tp=52_076, fp=353, fn=0, tn=10_000)
        assert counts.precision == pytest.approx(52_076 / 52_429)
        assert counts.precision == pytest.approx(0.99327, abs=1e-5)
        assert counts.recall == 1.0

    def test_matches_brute_force(self, rng):
        for _ in range(200):
            pred, target = random_pair(rng)
            counts = confusion(pred, target)
            assert counts.tp == sum(int(p and t) for p, t in zip(pred.ravel(), target.ravel()))
            assert counts.fp == sum(int(p and not t) for p, t in zip(pred.ravel(), target.ravel()))
            assert counts.fn == sum(int(t and not p) for p, t in zip(pred.ravel(), target.ravel()))
            assert counts.total == 256
            if counts.tp:
                f1 = 2 * counts.tp / (2 * counts.tp + counts.fp + counts.fn)
                assert counts.f1 == pytest.approx(f1, abs=1e-12)

    def test_specificity_and_error_rate(self):
        counts = ConfusionCounts(tp=10, fp=5, fn=5, tn=80)
        assert counts.specificity == 80 / 85
        assert counts.error_rate == 1000.0

    def test_empty_conventions(self):
        counts = ConfusionCounts(0, 0, 0, 16)
        assert counts.precision == counts.recall == 1.0
        assert ConfusionCounts(0, 0, 4, 12).precision == 0.0

    def test_addition(self):
        assert ConfusionCounts(1, 2, 3, 4) + ConfusionCounts(1, 1, 1, 1) == ConfusionCounts(2, 3, 4, 5)

    def test_non_binary_rejected(self):
        with pytest.raises(ValueError):
            confusion(np.full((2, 2), 2), np.zeros((2, 2)))

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            dice(np.zeros((2, 2)), np.zeros((3, 3)))


class TestOverlap:
    def test_identical(self, rng):
        pred, _ = random_pair(rng, density=0.5)
        assert dice(pred, pred) == iou(pred, pred) == 1.0

    def test_hand_count(self):
        pred = np.zeros((4, 4), np.uint8)
        target = np.zeros((4, 4), np.uint8)
        pred[0, 0:4] = 1
        target[0, 2:4] = 1
        target[1, 0:2] = 1
        assert dice(pred, target) == 0.5
        assert iou(pred, target) == pytest.approx(1 / 3)

    def test_both_empty(self):
        empty = np.zeros((4, 4), np.uint8)
        assert dice(empty, empty) == iou(empty, empty) == 1.0
        assert both_empty(empty, empty)

    def test_matches_brute_force(self, rng):
        for _ in range(200):
            pred, target = random_pair(rng)
            p, t = set(zip(*np.nonzero(pred))), set(zip(*np.nonzero(target)))
            if not p and not t:
                continue
            assert dice(pred, target) == 2 * len(p & t) / (len(p) + len(t))
            assert iou(pred, target) == len(p & t) / len(p | t)

    def test_iou_dice_identity(self, rng):
        for _ in range(1000):
            pred, target = random_pair(rng, size=8)
            d, j = dice(pred, target), iou(pred, target)
            assert j <= d
            assert j == pytest.approx(d / (2 - d), abs=1e-12)


class TestBoundaryDistances:
    def test_identical(self, rng):
        pred, _ = random_pair(rng, density=0.5)
        assert hausdorff(pred, pred) == asd(pred, pred) == 0.0

    def test_three_four_five(self):
        a = np.zeros((8, 8), np.uint8)
        b = np.zeros((8, 8), np.uint8)
        a[0, 0] = 1
        b[3, 4] = 1
        assert hausdorff(a, b) == 5.0
        assert asd(a, b) == 5.0

    def test_undefined_for_empty(self):
        empty, full = np.zeros((4, 4), np.uint8), np.ones((4, 4), np.uint8)
        assert hausdorff(empty, full) is None
        assert asd(full, empty) is None

    def test_frame_counts_as_background(self):
        edge = boundary(np.ones((3, 3), np.uint8))
        assert edge.sum() == 8 and not edge[1, 1]

    def test_matches_brute_force(self, rng):
        for _ in range(200):
            pred, target = random_pair(rng)
            if not pred.any() or not target.any():
                continue
            p_points, t_points = boundary_oracle(pred), boundary_oracle(target)
            assert sorted(map(tuple, np.argwhere(boundary(pred)))) == p_points
            forward, backward = distances_oracle(p_points, t_points), distances_oracle(t_points, p_points)
            assert hausdorff(pred, target) == pytest.approx(max(max(forward), max(backward)), abs=1e-9)
            expected = (sum(forward) + sum(backward)) / (len(forward) + len(backward))
            assert asd(pred, target) == pytest.approx(expected, abs=1e-9)

    def test_symmetry_and_order(self, rng):
        for _ in range(1000):
            pred, target = random_pair(rng, size=8, density=0.4)
            if not pred.any() or not target.any():
                continue
            h, s = hausdorff(pred, target), asd(pred, target)
            assert h >= s
            assert h == hausdorff(target, pred)
            assert s == pytest.approx(asd(target, pred), abs=1e-12)


class TestCurves:
    def test_hand_case(self):
        scores = np.array([0.9, 0.8, 0.7, 0.4, 0.3, 0.1])
        labels = np.array([1, 1, 0, 1, 0, 0])
        assert roc_pr_curves(scores, labels).auc_roc == pytest.approx(8 / 9, abs=1e-12)

    def test_perfect_separation(self):
        curves = roc_pr_curves(np.array([0.9, 0.8, 0.2, 0.1]), np.array([1, 1, 0, 0]))
        assert curves.auc_roc == 1.0
        assert curves.auc_pr == pytest.approx(1.0)

    def test_uninformative_scores(self):
        curves = roc_pr_curves(np.full(10, 0.5), np.array([1, 0] * 5))
        assert curves.auc_roc == pytest.approx(0.5)

    def test_matches_concordance(self, rng):
        for _ in range(50):
            labels = (rng.random(60) < 0.4).astype(np.uint8)
            labels[:2] = (0, 1)
            scores = np.round(rng.random(60), 1)
            assert roc_pr_curves(scores, labels).auc_roc == pytest.approx(concordance_oracle(scores, labels), abs=1e-9)

    def test_single_class(self):
        curves = roc_pr_curves(np.linspace(0, 1, 8), np.zeros(8, np.uint8))
        assert curves.auc_roc is None and not curves.roc_defined
        assert curves.auc_pr == 0.0

    def test_threshold_grid(self, rng):
        labels = (rng.random(40) < 0.5).astype(np.uint8)
        labels[:2] = (0, 1)
        scores = np.round(rng.random(40), 2)
        exact = roc_pr_curves(scores, labels)
        grid = roc_pr_curves(scores, labels, thresholds=np.unique(scores))
        assert grid.auc_roc == pytest.approx(exact.auc_roc, abs=1e-12)
        assert grid.recall[0] == 0.0 and grid.recall[-1] == 1.0

    def test_scores_outside_unit_interval(self):
        with pytest.raises(ValueError):
            roc_pr_curves(np.array([1.5, 0.2]), np.array([1, 0]))
