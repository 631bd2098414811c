"""Release-gate checks: every numerical claim the package makes, verified
against an independent oracle.

* assignment: `hungarian` vs the exhaustive `brute_force_assign`
* gradients: analytic BCE/Dice gradients vs central finite differences
* descent: the full matched loss drives free mask logits onto a target
* metrics: a small hand-tallied fixture with known gIoU/cIoU/N-acc/Pr@X
* loss structure: auxiliary round weighting degenerates the way it should

Each check returns a :class:`CheckResult`; `run_all` aggregates them for the
CLI, and the acceptance tests call the same functions directly.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import losses, matching, metrics
from .decoder import predict_targets, RoundOutput
from .masks import union_masks
from .numerics import sigmoid
from .rng import Rng


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: dict

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        parts = ", ".join(f"{k}={v}" for k, v in self.detail.items())
        return f"[{status}] {self.name}: {parts}"


def check_matching_oracle(cases: int = 1000, seed: int = 94621, max_queries: int = 7) -> CheckResult:
    """Random rectangular cost matrices: totals must agree exactly and the
    tie-broken assignments must be identical."""
    rng = Rng(seed)
    started = time.monotonic()
    mismatches = 0
    for i in range(cases):
        n = 1 + rng.below(max_queries)
        t = 1 + rng.below(n)
        # quantized entries provoke exact ties; mix in a few duplicates
        cost = np.round(rng.uniform(0.0, 1.0, (n, t)) * 8) / 8
        fast = matching.hungarian(cost)
        slow = matching.brute_force_assign(cost)
        if fast.pairs != slow.pairs or fast.total != slow.total:
            mismatches += 1
    elapsed = time.monotonic() - started
    return CheckResult(
        name="matching_oracle",
        passed=mismatches == 0 and elapsed < 10.0,
        detail={"cases": cases, "mismatches": mismatches, "seconds": round(elapsed, 3)},
    )


def check_gradient_fidelity(pairs: int = 100, seed: int = 52417, h: float = 1e-6, tol: float = 1e-5) -> CheckResult:
    """Analytic gradients vs central differences on random logit/target pairs."""
    rng = Rng(seed)
    started = time.monotonic()
    worst_bce = 0.0
    worst_dice = 0.0
    for _ in range(pairs):
        z = rng.uniform(-4.0, 4.0, (16, 16))
        g = (rng.fill((16, 16)) < 0.4).astype(np.float64)
        worst_bce = max(worst_bce, losses.finite_diff_check(lambda x: losses.bce_with_logits(x, g), z, h))
        worst_dice = max(worst_dice, losses.finite_diff_check(lambda x: losses.dice_loss(x, g), z, h))
    elapsed = time.monotonic() - started
    return CheckResult(
        name="gradient_fidelity",
        passed=worst_bce < tol and worst_dice < tol and elapsed < 5.0,
        detail={
            "pairs": pairs,
            "max_rel_err_bce": float(worst_bce),
            "max_rel_err_dice": float(worst_dice),
            "seconds": round(elapsed, 3),
        },
    )


def make_two_instance_target(height: int = 16, width: int = 16) -> np.ndarray:
    """Fixed two-instance ground truth used by the descent check."""
    a = np.zeros((height, width))
    a[2:7, 2:7] = 1.0
    b = np.zeros((height, width))
    b[9:14, 8:15] = 1.0
    return np.stack([a, b])


def descend_free_logits(
    gt_masks,
    n_queries: int = 5,
    steps: int = 500,
    lr: float = 5.0,
    weights: losses.LossWeights = losses.LossWeights(),
    threshold: float = 0.7,
) -> dict:
    """Gradient-descend free mask/referent/existence logits under the full
    matched objective and report the resulting union-mask IoU.

    No network is involved: the logits themselves are the optimization
    variables, re-matched to the targets every step. Demonstrates that the
    loss stack alone pulls predictions onto the ground truth.
    """
    gt = np.asarray(gt_masks, dtype=np.float64)
    t, h, w = gt.shape
    mask_logits = np.zeros((n_queries, h, w))
    referent_logits = np.zeros(n_queries)
    existence_logit = 0.0
    history = []
    for _ in range(steps):
        cost = matching.match_cost(mask_logits, referent_logits, gt)
        match = matching.hungarian(cost)
        grad_masks = np.zeros_like(mask_logits)
        for q, tgt in match.pairs:
            _, gb = losses.bce_with_logits(mask_logits[q], gt[tgt])
            _, gd = losses.dice_loss(mask_logits[q], gt[tgt])
            grad_masks[q] = (gb + gd) / len(match.pairs)
        _, grad_ref = losses.referent_loss(referent_logits, match.matched_queries)
        _, grad_exist = losses.nonreferent_loss(existence_logit, exists=True)
        report = losses.round_loss(
            mask_logits, referent_logits, gt, match.pairs, weights,
            existence_logit=existence_logit, exists=True,
        )
        history.append(report.total)
        mask_logits -= lr * weights.mask * grad_masks
        referent_logits -= lr * weights.referent * grad_ref
        existence_logit -= lr * weights.existence * grad_exist
    final = RoundOutput(
        perception_queries=np.zeros((n_queries, 1)),
        mask_logits=mask_logits,
        cognition_queries=np.zeros((n_queries, 1)),
        referent_logits=referent_logits,
        fused_queries=np.zeros((n_queries, 1)),
    )
    pred = predict_targets(final, float(sigmoid(np.asarray(existence_logit))),
                           threshold=threshold, use_existence=True)
    target_union = union_masks([m.astype(np.uint8) for m in gt], shape=(h, w))
    ev = metrics.sample_iou(pred.union_mask, target_union)
    return {
        "iou": ev.iou,
        "selected": pred.selected,
        "loss_first": history[0],
        "loss_last": history[-1],
    }


def check_descent(steps: int = 500, lr: float = 5.0, n_queries: int = 5,
                  iou_floor: float = 0.99) -> CheckResult:
    started = time.monotonic()
    out = descend_free_logits(make_two_instance_target(), n_queries=n_queries,
                              steps=steps, lr=lr)
    elapsed = time.monotonic() - started
    return CheckResult(
        name="loss_descent",
        passed=out["iou"] > iou_floor and elapsed < 5.0,
        detail={"iou": round(out["iou"], 6), "steps": steps,
                "loss_first": round(out["loss_first"], 4),
                "loss_last": round(out["loss_last"], 6),
                "seconds": round(elapsed, 3)},
    )


def hand_metric_fixture() -> list[metrics.SampleEval]:
    """Five 4x4 samples with hand-tallied intersections and unions:

    1. gt 2px, pred 1px inside          -> (1, 2), IoU 0.5
    2. gt 10px, pred 9px inside         -> (9, 10), IoU 0.9
    3. empty gt, empty pred             -> (0, 0), IoU 1
    4. empty gt, pred 2px               -> (0, 2), IoU 0
    5. gt == pred, 4px                  -> (4, 4), IoU 1
    """
    def mk(pixels):
        m = np.zeros((4, 4), dtype=np.uint8)
        for r, c in pixels:
            m[r, c] = 1
        return m

    gt1 = mk([(0, 0), (0, 1)])
    pr1 = mk([(0, 0)])
    gt2 = mk([(r, c) for r in range(3) for c in range(3)] + [(3, 0)])
    pr2 = mk([(r, c) for r in range(3) for c in range(3)])
    gt3 = mk([])
    pr3 = mk([])
    gt4 = mk([])
    pr4 = mk([(2, 2), (2, 3)])
    gt5 = mk([(0, 0), (1, 1), (2, 2), (3, 3)])
    pr5 = gt5.copy()
    return [
        metrics.sample_iou(p, g)
        for p, g in [(pr1, gt1), (pr2, gt2), (pr3, gt3), (pr4, gt4), (pr5, gt5)]
    ]


HAND_FIXTURE_EXPECTED = {
    "giou": (0.5 + 0.9 + 1.0 + 0.0 + 1.0) / 5,
    "ciou": 14 / 18,
    "n_acc": 1 / 2,
    "pr_at_0.9": 1 / 3,   # only the exact-match sample clears 0.9 strictly
    "miou": (0.5 + 0.9 + 1.0) / 3,
}


def check_metric_oracle(tol: float = 1e-12) -> CheckResult:
    evals = hand_metric_fixture()
    report = metrics.evaluate(evals, pr_thresholds=(0.9,))
    observed = {
        "giou": report.giou,
        "ciou": report.ciou,
        "n_acc": report.n_acc,
        "pr_at_0.9": report.pr_at[0.9],
        "miou": report.miou,
    }
    errs = {k: abs(observed[k] - v) for k, v in HAND_FIXTURE_EXPECTED.items()}
    # the divergence pair: per-sample mean vs pooled ratio must differ
    pair = [
        metrics.SampleEval(1, 2, False, False, 0.5),
        metrics.SampleEval(9, 10, False, False, 0.9),
    ]
    pair_ok = (
        abs(metrics.giou(pair) - 0.7) < tol
        and abs(metrics.ciou(pair) - 10 / 12) < tol
    )
    empty_ok = metrics.sample_iou(np.zeros((4, 4)), np.zeros((4, 4))).iou == 1.0
    passed = all(e < tol for e in errs.values()) and pair_ok and empty_ok
    return CheckResult(
        name="metric_oracle",
        passed=passed,
        detail={"max_abs_err": max(errs.values()), "pair_divergence": pair_ok,
                "empty_empty_iou_1": empty_ok},
    )


def check_loss_structure() -> CheckResult:
    total = losses.total_loss([1.0, 1.0, 1.0], aux_weight=0.2)
    single = losses.total_loss([3.25], aux_weight=0.2)
    ok = total == 1.4 and single == 3.25
    return CheckResult(
        name="loss_structure",
        passed=ok,
        detail={"total_111_aux02": total, "single_round": single},
    )


def run_all(seed: int = 94621, matching_cases: int = 1000) -> list[CheckResult]:
    return [
        check_matching_oracle(cases=matching_cases, seed=seed),
        check_gradient_fidelity(),
        check_descent(),
        check_metric_oracle(),
        check_loss_structure(),
    ]
