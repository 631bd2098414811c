"""Training objective: mask, referent and existence losses with analytic
gradients at the logit level, per-round totals, and a finite-difference
verifier for the gradients.

The per-round total combines three weighted terms (mask BCE+Dice over
matched query/target pairs, referent BCE over all queries, existence BCE on
the pooled head); the dataset objective down-weights every round but the
last by ``aux`` and adds the final round at full weight.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .numerics import sigmoid
from .validation import as_f64, check_binary, check_same_shape

DICE_EPS = 1.0


@dataclass(frozen=True)
class LossWeights:
    mask: float = 1.0
    referent: float = 1.0
    existence: float = 1.0
    aux: float = 0.2


def bce_with_logits(logits, targets):
    """Mean binary cross-entropy against 0/1 targets, stable for any logit.

    Returns ``(loss, grad)`` where grad is d(loss)/d(logits), i.e.
    ``(sigmoid(z) - g) / count``.
    """
    z = as_f64(logits)
    g = check_binary(targets, "targets")
    check_same_shape(z, g, "logits", "targets")
    per = np.maximum(z, 0.0) - z * g + np.log1p(np.exp(-np.abs(z)))
    loss = float(per.mean())
    grad = (sigmoid(z) - g) / z.size
    return loss, grad


def dice_loss(logits, targets):
    """Soft Dice loss on sigmoid probabilities, smoothed by ``DICE_EPS``.

    Returns ``(loss, grad)`` with the analytic gradient obtained from the
    quotient rule times sigmoid'(z).
    """
    z = as_f64(logits)
    g = check_binary(targets, "targets")
    check_same_shape(z, g, "logits", "targets")
    p = sigmoid(z)
    if not isinstance(p, np.ndarray):
        p = np.asarray(p)
    num = 2.0 * float((p * g).sum()) + DICE_EPS
    den = float(p.sum()) + float(g.sum()) + DICE_EPS
    loss = 1.0 - num / den
    dloss_dp = -(2.0 * g * den - num) / (den * den)
    grad = dloss_dp * p * (1.0 - p)
    return loss, grad


def referent_loss(referent_logits, matched_ids):
    """BCE over every query logit; matched queries carry target 1."""
    z = as_f64(referent_logits)
    if z.ndim != 1:
        raise ValueError(f"referent logits must be 1-D, got shape {z.shape}")
    targets = np.zeros_like(z)
    ids = list(matched_ids)
    if ids:
        targets[np.asarray(ids, dtype=np.int64)] = 1.0
    return bce_with_logits(z, targets)


def nonreferent_loss(existence_logit, exists: bool):
    """Scalar BCE on the pooled existence logit (target 1 when a referent exists)."""
    z = float(existence_logit)
    t = 1.0 if exists else 0.0
    loss = max(z, 0.0) - z * t + math.log1p(math.exp(-abs(z)))
    grad = float(sigmoid(np.asarray(z))) - t
    return loss, grad


@dataclass(frozen=True)
class RoundLoss:
    mask_term: float
    referent_term: float
    existence_term: float
    total: float


def round_loss(
    mask_logits,
    referent_logits,
    gt_masks,
    pairs,
    weights: LossWeights = LossWeights(),
    existence_logit=None,
    exists=None,
) -> RoundLoss:
    """One round's weighted total.

    ``pairs`` is the (query, target) assignment for this round's masks; the
    mask term averages BCE+Dice over those pairs and is 0 when no targets
    exist. The existence term only applies on the round that produced the
    pooled logit (pass ``existence_logit=None`` elsewhere, which zeroes it).
    """
    m = as_f64(mask_logits)
    pairs = list(pairs)
    if pairs:
        gt = as_f64(gt_masks)
        per_pair = []
        for q, t in pairs:
            b, _ = bce_with_logits(m[q], gt[t])
            d, _ = dice_loss(m[q], gt[t])
            per_pair.append(b + d)
        mask_term = float(math.fsum(per_pair) / len(per_pair))
    else:
        mask_term = 0.0
    referent_term, _ = referent_loss(referent_logits, [q for q, _ in pairs])
    if existence_logit is None:
        existence_term = 0.0
    else:
        if exists is None:
            raise ValueError("existence_logit given without an `exists` target")
        existence_term, _ = nonreferent_loss(existence_logit, exists)
    total = (
        weights.mask * mask_term
        + weights.referent * referent_term
        + weights.existence * existence_term
    )
    return RoundLoss(mask_term, referent_term, existence_term, total)


def total_loss(round_totals, aux_weight: float = 0.2) -> float:
    """Auxiliary-weighted sum: ``aux * sum(rounds[:-1]) + rounds[-1]``."""
    totals = [float(t) for t in round_totals]
    if not totals:
        raise ValueError("total_loss needs at least one round")
    return aux_weight * math.fsum(totals[:-1]) + totals[-1]


def finite_diff_check(fn, point, h: float = 1e-6) -> float:
    """Max relative error between ``fn``'s analytic gradient and central
    differences at ``point``.

    ``fn`` maps an array to ``(loss, grad)``; relative error uses
    ``max(|analytic|, |numeric|, 1e-12)`` as denominator. ``h`` must lie in
    [1e-8, 1e-4] where f64 central differences are trustworthy.
    """
    if not 1e-8 <= h <= 1e-4:
        raise ValueError(f"step {h} outside [1e-8, 1e-4]")
    x = as_f64(point).copy()
    _, grad = fn(x)
    grad = as_f64(grad)
    worst = 0.0
    flat = x.ravel()
    gflat = grad.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up, _ = fn(x)
        flat[i] = orig - h
        down, _ = fn(x)
        flat[i] = orig
        numeric = (up - down) / (2.0 * h)
        denom = max(abs(gflat[i]), abs(numeric), 1e-12)
        worst = max(worst, abs(gflat[i] - numeric) / denom)
    return worst
