"""Precision/recall curves, voxel metrics, and classification accuracy.

Voxels are pooled across the whole evaluation set (micro-averaged), so
shapes that lack the part still contribute false positives.  Precision at
a threshold with no predictions is defined as 1.  The curve's AUC is the
trapezoid over recall with an implicit anchor at recall 0 carrying the
highest-threshold precision.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import ArgumentError, DegenerateInputError, ShapeError

DEFAULT_THRESHOLDS = np.linspace(1.0, 0.0, 101)


@dataclass
class PRCurve:
    thresholds: np.ndarray   # descending
    precision: np.ndarray
    recall: np.ndarray
    auc: float

    def as_text(self) -> str:
        lines = ["threshold,precision,recall"]
        for t, p, r in zip(self.thresholds, self.precision, self.recall):
            lines.append(f"{t:.6f},{p:.9f},{r:.9f}")
        lines.append(f"# auc,{self.auc:.9f}")
        return "\n".join(lines) + "\n"


def pool_voxels(maps: Sequence[np.ndarray], gts: Sequence[Optional[np.ndarray]],
                occupancies: Sequence[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    """Flatten occupied-voxel map values and their positive/negative truth."""
    values = []
    truths = []
    for m, gt, occ in zip(maps, gts, occupancies):
        occ = occ.astype(bool)
        if m.shape != occ.shape:
            raise ShapeError(f"map dims {list(m.shape)} vs occupancy dims {list(occ.shape)}")
        values.append(m[occ])
        if gt is None:
            truths.append(np.zeros(int(occ.sum()), dtype=bool))
        else:
            truths.append(gt.astype(bool)[occ])
    return np.concatenate(values), np.concatenate(truths)


def pr_curve(maps: Sequence[np.ndarray], gts: Sequence[Optional[np.ndarray]],
             occupancies: Sequence[np.ndarray],
             thresholds: Optional[np.ndarray] = None) -> PRCurve:
    """Pooled precision/recall over a set of shapes.

    ``thresholds`` defaults to 101 uniform values in [0, 1] (descending).
    The sentinel ``"unique"`` sweeps every distinct map value instead,
    which makes the AUC exactly invariant under strictly monotone
    transforms of the map.
    """
    values, truth = pool_voxels(maps, gts, occupancies)
    n_pos = int(truth.sum())
    if n_pos == 0:
        raise DegenerateInputError("no positive voxels in the evaluation set")
    if thresholds is None:
        thresholds = DEFAULT_THRESHOLDS
    elif isinstance(thresholds, str):
        if thresholds != "unique":
            raise ArgumentError(f"unknown threshold mode {thresholds!r}")
        distinct = np.unique(values)[::-1]
        thresholds = np.concatenate((distinct, [distinct.min() - 1.0]))
    else:
        thresholds = np.asarray(thresholds, dtype=np.float64)
        if np.any(np.diff(thresholds) > 0):
            raise ArgumentError("thresholds must be descending")

    pos_sorted = np.sort(values[truth])
    neg_sorted = np.sort(values[~truth])
    # predictions are strict: value > threshold
    tp = len(pos_sorted) - np.searchsorted(pos_sorted, thresholds, side="right")
    fp = len(neg_sorted) - np.searchsorted(neg_sorted, thresholds, side="right")
    predicted = tp + fp
    precision = np.where(predicted > 0, tp / np.maximum(predicted, 1), 1.0)
    recall = tp / n_pos
    auc = _trapezoid_auc(precision, recall, predicted)
    return PRCurve(thresholds, precision, recall, float(auc))


def _trapezoid_auc(precision: np.ndarray, recall: np.ndarray, predicted: np.ndarray) -> float:
    # integrate over prediction-yielding points only, anchored at recall 0
    # with the first such point's precision: a constant map then scores its
    # prevalence and a perfect map scores 1, while the reported curve still
    # carries precision 1 at empty-prediction thresholds
    yielding = np.flatnonzero(predicted > 0)
    if len(yielding) == 0:
        return 0.0
    r = np.concatenate(([0.0], recall[yielding]))
    p = np.concatenate(([precision[yielding[0]]], precision[yielding]))
    order = np.argsort(r, kind="stable")
    r, p = r[order], p[order]
    return float(np.sum(np.diff(r) * (p[1:] + p[:-1]) / 2.0))


def voxel_metrics(pred: np.ndarray, gt: np.ndarray, occupancy: np.ndarray) -> dict:
    """Accuracy and per-class IOU over occupied voxels only."""
    occ = occupancy.astype(bool)
    if int(occ.sum()) == 0:
        raise DegenerateInputError("no occupied voxels to score")
    p = pred[occ]
    g = gt[occ]
    accuracy = float((p == g).mean())
    classes = np.union1d(np.unique(p), np.unique(g))
    iou = {}
    for c in classes:
        inter = int(((p == c) & (g == c)).sum())
        union = int(((p == c) | (g == c)).sum())
        if union:
            iou[int(c)] = inter / union
    mean_iou = float(np.mean(list(iou.values()))) if iou else float("nan")
    return {"accuracy": accuracy, "iou": iou, "mean_iou": mean_iou}


def classification_accuracy(scores: np.ndarray, labels: np.ndarray,
                            threshold: Optional[float] = None) -> float:
    """Argmax accuracy, or per-tag thresholded accuracy when a threshold is
    given (multi-label scores)."""
    scores = np.asarray(scores)
    labels = np.asarray(labels)
    if scores.size == 0:
        raise DegenerateInputError("no scores to evaluate")
    if threshold is None:
        pred = np.argmax(scores, axis=1)
        return float((pred == labels).mean())
    pred = scores > threshold
    return float((pred == labels.astype(bool)).mean())


def gated_strong_eval(strong_maps: Sequence[np.ndarray],
                      classifier_scores: Sequence[np.ndarray],
                      gts: Sequence[Optional[np.ndarray]],
                      occupancies: Sequence[np.ndarray],
                      thresholds: Optional[np.ndarray] = None) -> PRCurve:
    """Score strong-supervision maps gated by a weak classifier.

    Shapes the classifier calls negative (argmax != present class) have
    their maps zeroed before pooling.
    """
    gated = []
    for m, s in zip(strong_maps, classifier_scores):
        if int(np.argmax(s)) != 1:
            gated.append(np.zeros_like(m))
        else:
            gated.append(m)
    return pr_curve(gated, gts, occupancies, thresholds)
