"""
Pixel-overlap, boundary-distance and ranking metrics of binary segmentations.

Masks are H x W arrays of {0, 1}; distances are in pixels.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.ndimage import binary_erosion, generate_binary_structure
from scipy.spatial import cKDTree
from sklearn.metrics import auc, confusion_matrix, precision_recall_curve, roc_curve

from pyheadseg.exceptions import ShapeError

# 4-connected structuring element
CROSS = generate_binary_structure(2, 1)


def _as_binary(mask: np.ndarray, name: str) -> np.ndarray:
    array = np.asarray(mask)
    if array.dtype != bool and not np.isin(array, (0, 1)).all():
        raise ValueError(f"{name} is not binary")
    return array.astype(bool)


def _pair(pred: np.ndarray, target: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    p, t = _as_binary(pred, "prediction"), _as_binary(target, "target")
    if p.shape != t.shape:
        raise ShapeError(f"prediction {p.shape} and target {t.shape} differ")
    return p, t


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    def __add__(self, other: ConfusionCounts) -> ConfusionCounts:
        return ConfusionCounts(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn, self.tn + other.tn)

    @property
    def precision(self) -> float:
        predicted = self.tp + self.fp
        if predicted == 0:
            return 1.0 if self.fn == 0 else 0.0
        return self.tp / predicted

    @property
    def recall(self) -> float:
        actual = self.tp + self.fn
        if actual == 0:
            return 1.0 if self.fp == 0 else 0.0
        return self.tp / actual

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r > 0 else 0.0

    @property
    def specificity(self) -> float:
        negatives = self.tn + self.fp
        return self.tn / negatives if negatives else 1.0

    @property
    def error_rate(self) -> float:
        """
        Misclassified pixels per 10,000.
        """
        return 1e4 * (self.fp + self.fn) / self.total if self.total else 0.0


def confusion(pred: np.ndarray, target: np.ndarray) -> ConfusionCounts:
    p, t = _pair(pred, target)
    tn, fp, fn, tp = confusion_matrix(t.ravel(), p.ravel(), labels=[False, True]).ravel()
    return ConfusionCounts(int(tp), int(fp), int(fn), int(tn))


def dice(pred: np.ndarray, target: np.ndarray) -> float:
    """
    2|P & G| / (|P| + |G|); two empty masks score 1.
    """
    p, t = _pair(pred, target)
    denominator = int(p.sum()) + int(t.sum())
    if denominator == 0:
        return 1.0
    return 2.0 * int((p & t).sum()) / denominator


def iou(pred: np.ndarray, target: np.ndarray) -> float:
    p, t = _pair(pred, target)
    union = int((p | t).sum())
    if union == 0:
        return 1.0
    return int((p & t).sum()) / union


def both_empty(pred: np.ndarray, target: np.ndarray) -> bool:
    p, t = _pair(pred, target)
    return not p.any() and not t.any()


def boundary(mask: np.ndarray) -> np.ndarray:
    """
    Foreground pixels with at least one 4-neighbour in the background; the frame
    outside the image counts as background.
    """
    m = _as_binary(mask, "mask")
    return m & ~binary_erosion(m, structure=CROSS, border_value=0)


def _surface_distances(pred: np.ndarray, target: np.ndarray) -> Optional[Tuple[np.ndarray, np.ndarray]]:
    p, t = _pair(pred, target)
    if not p.any() or not t.any():
        return None
    p_points = np.argwhere(boundary(p)).astype(np.float64)
    t_points = np.argwhere(boundary(t)).astype(np.float64)
    p_to_t, _ = cKDTree(t_points).query(p_points)
    t_to_p, _ = cKDTree(p_points).query(t_points)
    return p_to_t, t_to_p


def hausdorff(pred: np.ndarray, target: np.ndarray) -> Optional[float]:
    """
    Symmetric max-min boundary distance; None when either mask is empty.
    """
    distances = _surface_distances(pred, target)
    if distances is None:
        return None
    return float(max(distances[0].max(), distances[1].max()))


def asd(pred: np.ndarray, target: np.ndarray) -> Optional[float]:
    """
    Average symmetric surface distance over both boundary sets; None when either mask is empty.
    """
    distances = _surface_distances(pred, target)
    if distances is None:
        return None
    p_to_t, t_to_p = distances
    return float((p_to_t.sum() + t_to_p.sum()) / (p_to_t.size + t_to_p.size))


@dataclass
class Curves:
    fpr: np.ndarray
    tpr: np.ndarray
    precision: np.ndarray
    recall: np.ndarray
    auc_roc: Optional[float]
    auc_pr: float

    @property
    def roc_defined(self) -> bool:
        return self.auc_roc is not None


def _curves_at(scores: np.ndarray, labels: np.ndarray, thresholds: Sequence[float]):
    grid = np.sort(np.asarray(thresholds, dtype=np.float64))[::-1]
    predicted = scores[None, :] >= grid[:, None]
    tp = (predicted & labels[None, :]).sum(axis=1).astype(np.float64)
    fp = (predicted & ~labels[None, :]).sum(axis=1).astype(np.float64)
    positives, negatives = labels.sum(), (~labels).sum()
    tpr = np.concatenate([[0.0], tp / max(positives, 1), [1.0]])
    fpr = np.concatenate([[0.0], fp / max(negatives, 1), [1.0]])
    with np.errstate(invalid="ignore", divide="ignore"):
        precision = np.where(tp + fp > 0, tp / (tp + fp), 1.0)
    recall = tp / max(positives, 1)
    precision = np.concatenate([[1.0], precision])
    recall = np.concatenate([[0.0], recall])
    if recall[-1] < 1.0:
        precision = np.append(precision, positives / labels.size)
        recall = np.append(recall, 1.0)
    return fpr, tpr, precision, recall


def roc_pr_curves(
    scores: np.ndarray,
    target: np.ndarray,
    thresholds: Optional[Sequence[float]] = None,
) -> Curves:
    """
    Pixel-pooled ROC and precision-recall curves with trapezoid areas.

    Without `thresholds` every distinct score is a threshold (exact curves). A target
    with a single class leaves ROC undefined (`auc_roc` is None) and the PR curve at the
    prevalence baseline.
    """
    s = np.asarray(scores, dtype=np.float64).ravel()
    labels = _as_binary(target, "target").ravel()
    if s.shape != labels.shape:
        raise ShapeError(f"{s.size} scores for {labels.size} labels")
    if s.size and (s.min() < 0 or s.max() > 1):
        raise ValueError("scores must lie in [0, 1]")

    positives = int(labels.sum())
    if positives == 0 or positives == labels.size:
        prevalence = positives / max(labels.size, 1)
        return Curves(
            fpr=np.array([0.0, 1.0]),
            tpr=np.array([0.0, 1.0]),
            precision=np.array([prevalence, prevalence]),
            recall=np.array([0.0, 1.0]),
            auc_roc=None,
            auc_pr=float(prevalence),
        )

    if thresholds is None:
        fpr, tpr, _ = roc_curve(labels, s, drop_intermediate=False)
        precision, recall, _ = precision_recall_curve(labels, s)
        precision, recall = precision[::-1], recall[::-1]
    else:
        fpr, tpr, precision, recall = _curves_at(s, labels, thresholds)
    return Curves(
        fpr=fpr,
        tpr=tpr,
        precision=precision,
        recall=recall,
        auc_roc=float(auc(fpr, tpr)),
        auc_pr=float(auc(recall, precision)),
    )
