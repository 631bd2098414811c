"""One-to-one assignment between predicted query masks and ground-truth
instances.

``hungarian`` returns the minimum-cost assignment with a fully specified
tie-break (the lexicographically smallest pair list among optimal
assignments), so results are reproducible bit-for-bit; ``brute_force_assign``
is the exhaustive oracle used to verify it. Totals on both sides are exact
(``math.fsum``), which makes "same pairs" imply "same total" with no
accumulation-order caveats.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import permutations

import numpy as np
from scipy.optimize import linear_sum_assignment

from .losses import bce_with_logits, dice_loss
from .numerics import sigmoid
from .validation import as_f64, check_finite

BRUTE_FORCE_LIMIT = 8


@dataclass(frozen=True)
class MatchResult:
    """Assignment as (query_id, gt_id) pairs sorted by query id; every gt
    appears exactly once, every query at most once."""

    pairs: tuple[tuple[int, int], ...]
    unmatched: tuple[int, ...]
    total: float

    @property
    def matched_queries(self) -> tuple[int, ...]:
        return tuple(q for q, _ in self.pairs)


def match_cost(mask_logits, referent_logits, gt_masks) -> np.ndarray:
    """(N, T) cost matrix: per-pair mask BCE + Dice plus a bounded referent
    term ``1 - sigmoid(score)``. GT masks must already live at the mask-head
    resolution (see :func:`loopseg.masks.downsample_majority`)."""
    m = as_f64(mask_logits)
    s = as_f64(referent_logits)
    if m.ndim != 3:
        raise ValueError(f"mask logits must be (N, H, W), got {m.shape}")
    n = m.shape[0]
    if s.shape != (n,):
        raise ValueError(f"referent logits shape {s.shape} != ({n},)")
    gt = as_f64(gt_masks)
    if gt.size == 0:
        return np.zeros((n, 0))
    if gt.ndim != 3 or gt.shape[1:] != m.shape[1:]:
        raise ValueError(f"gt masks {gt.shape} do not match mask logits {m.shape}")
    t = gt.shape[0]
    referent_term = 1.0 - sigmoid(s)
    cost = np.empty((n, t))
    for i in range(n):
        for j in range(t):
            b, _ = bce_with_logits(m[i], gt[j])
            d, _ = dice_loss(m[i], gt[j])
            cost[i, j] = b + d + referent_term[i]
    return cost


def _exact_total(cost: np.ndarray, pairs) -> float:
    return math.fsum(cost[q, t] for q, t in pairs)


def _best_total(cost: np.ndarray) -> float:
    rows, cols = linear_sum_assignment(cost)
    return math.fsum(cost[r, c] for r, c in zip(rows, cols))


def hungarian(cost) -> MatchResult:
    """Minimum-total assignment of every column (gt) to a distinct row (query).

    Rectangular inputs need T <= N. Among equal-total optima the
    lexicographically smallest pair list wins, found by fixing, query by
    query, the smallest gt that still admits an optimal completion.
    """
    cost = check_finite(cost, "cost matrix")
    if cost.ndim != 2:
        raise ValueError(f"cost matrix must be 2-D, got shape {cost.shape}")
    n, t = cost.shape
    if t == 0:
        return MatchResult(pairs=(), unmatched=tuple(range(n)), total=0.0)
    if t > n:
        raise ValueError(f"more targets than queries: {t} > {n}")
    best = _best_total(cost)
    pairs: list[tuple[int, int]] = []
    free_cols = list(range(t))
    for q in range(n):
        if not free_cols:
            break
        remaining_rows = np.arange(q + 1, n)
        for col in free_cols:
            rest_cols = [c for c in free_cols if c != col]
            # Exact total of the best assignment extending pairs + (q, col):
            # fsum over every selected entry, so comparison with `best` is
            # free of accumulation-order effects.
            entries = [cost[a, b] for a, b in pairs]
            entries.append(cost[q, col])
            if rest_cols:
                sub = cost[np.ix_(remaining_rows, rest_cols)]
                rr, cc = linear_sum_assignment(sub)
                entries.extend(sub[r, c] for r, c in zip(rr, cc))
            if math.fsum(entries) == best:
                pairs.append((q, col))
                free_cols.remove(col)
                break
    matched = {q for q, _ in pairs}
    return MatchResult(
        pairs=tuple(pairs),
        unmatched=tuple(q for q in range(n) if q not in matched),
        total=_exact_total(cost, pairs),
    )


def brute_force_assign(cost) -> MatchResult:
    """Exhaustive minimum over all injections of columns into rows, with the
    same (total, pair-list) ordering as :func:`hungarian`. Guarded to
    T <= ``BRUTE_FORCE_LIMIT`` targets."""
    cost = check_finite(cost, "cost matrix")
    if cost.ndim != 2:
        raise ValueError(f"cost matrix must be 2-D, got shape {cost.shape}")
    n, t = cost.shape
    if t == 0:
        return MatchResult(pairs=(), unmatched=tuple(range(n)), total=0.0)
    if t > BRUTE_FORCE_LIMIT:
        raise ValueError(f"brute force limited to {BRUTE_FORCE_LIMIT} targets, got {t}")
    if t > n:
        raise ValueError(f"more targets than queries: {t} > {n}")
    best_key = None
    for rows in permutations(range(n), t):
        pairs = tuple(sorted((r, c) for c, r in enumerate(rows)))
        key = (_exact_total(cost, pairs), pairs)
        if best_key is None or key < best_key:
            best_key = key
    total, pairs = best_key
    matched = {q for q, _ in pairs}
    return MatchResult(
        pairs=pairs,
        unmatched=tuple(q for q in range(n) if q not in matched),
        total=total,
    )
