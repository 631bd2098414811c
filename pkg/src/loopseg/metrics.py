"""Generalized referring-segmentation evaluation from exact pixel tallies.

Per-sample IoU follows the empty-target convention: an empty prediction on
an empty target is a true positive with IoU 1, a one-sided empty scores 0.
Dataset metrics:

* ``giou``  - mean per-sample IoU over everything, empty targets included
* ``ciou``  - ratio of integer-summed intersections to integer-summed unions
* ``n_acc`` - fraction of empty-target samples predicted empty
* ``pr_at`` - fraction of nonempty-target samples with IoU strictly above a
  threshold
* ``miou``  - mean IoU restricted to nonempty-target samples

All tallies are integers until the final division, so results are invariant
to sample order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .validation import check_mask, check_same_shape, check_unit


@dataclass(frozen=True)
class SampleEval:
    intersection: int
    union: int
    gt_empty: bool
    pred_empty: bool
    iou: float


def sample_iou(pred_mask, gt_mask) -> SampleEval:
    """Integer intersection/union tallies plus IoU for one sample."""
    pred = check_mask(pred_mask)
    gt = check_mask(gt_mask)
    check_same_shape(pred, gt, "prediction", "ground truth")
    pred_b = pred.astype(bool)
    gt_b = gt.astype(bool)
    inter = int(np.count_nonzero(pred_b & gt_b))
    union = int(np.count_nonzero(pred_b | gt_b))
    gt_empty = not gt_b.any()
    pred_empty = not pred_b.any()
    if gt_empty and pred_empty:
        iou = 1.0
    elif gt_empty or pred_empty:
        iou = 0.0
    else:
        iou = inter / union
    return SampleEval(inter, union, gt_empty, pred_empty, iou)


def giou(evals) -> float:
    evals = list(evals)
    if not evals:
        raise ValueError("giou needs at least one sample")
    # fsum: correctly rounded, so the mean is exactly order-invariant
    return math.fsum(e.iou for e in evals) / len(evals)


def ciou_tallies(evals) -> tuple[int, int]:
    inter = sum(e.intersection for e in evals)
    union = sum(e.union for e in evals)
    return inter, union


def ciou(evals) -> float:
    inter, union = ciou_tallies(evals)
    if union == 0:
        return 1.0  # vacuously perfect: nothing predicted, nothing required
    return inter / union


def n_acc(evals):
    """Accuracy on empty-target samples; None when the dataset has none."""
    empties = [e for e in evals if e.gt_empty]
    if not empties:
        return None
    return sum(1 for e in empties if e.pred_empty) / len(empties)


def pr_at(evals, threshold: float):
    """Fraction of nonempty-target samples with IoU strictly above the
    threshold; None when the dataset has no nonempty targets."""
    threshold = check_unit(threshold, "threshold")
    if threshold in (0.0, 1.0):
        raise ValueError("threshold must lie strictly inside (0, 1)")
    targets = [e for e in evals if not e.gt_empty]
    if not targets:
        return None
    return sum(1 for e in targets if e.iou > threshold) / len(targets)


def miou(evals):
    """Mean IoU over nonempty-target samples (the classic single-referent
    metric); equals giou on datasets without empty targets."""
    targets = [e for e in evals if not e.gt_empty]
    if not targets:
        return None
    return math.fsum(e.iou for e in targets) / len(targets)


@dataclass(frozen=True)
class MetricsReport:
    giou: float
    ciou: float
    ciou_intersection: int
    ciou_union: int
    n_acc: float | None
    pr_at: dict
    miou: float | None
    samples: int
    nonreferent_samples: int

    def to_dict(self) -> dict:
        return {
            "giou": self.giou,
            "ciou": self.ciou,
            "ciou_intersection": self.ciou_intersection,
            "ciou_union": self.ciou_union,
            "n_acc": self.n_acc,
            "pr_at": {f"{k:g}": v for k, v in sorted(self.pr_at.items())},
            "miou": self.miou,
            "samples": self.samples,
            "nonreferent_samples": self.nonreferent_samples,
        }


def evaluate(evals, pr_thresholds=(0.9,)) -> MetricsReport:
    evals = list(evals)
    inter, union = ciou_tallies(evals)
    return MetricsReport(
        giou=giou(evals),
        ciou=ciou(evals),
        ciou_intersection=inter,
        ciou_union=union,
        n_acc=n_acc(evals),
        pr_at={float(t): pr_at(evals, t) for t in pr_thresholds},
        miou=miou(evals),
        samples=len(evals),
        nonreferent_samples=sum(1 for e in evals if e.gt_empty),
    )
