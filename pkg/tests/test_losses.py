import math

import numpy as np
import pytest

from loopseg.losses import (
    LossWeights,
    bce_with_logits,
    dice_loss,
    finite_diff_check,
    nonreferent_loss,
    referent_loss,
    round_loss,
    total_loss,
)
from loopseg.rng import Rng

LN2 = math.log(2.0)


# --- BCE ----------------------------------------------------------------------

def test_bce_at_zero_logits_is_ln2():
    for g in (np.zeros((3, 3)), np.ones((3, 3))):
        loss, _ = bce_with_logits(np.zeros((3, 3)), g)
        assert loss == pytest.approx(LN2, abs=1e-15)


def test_bce_saturated_correct_is_zero():
    loss, grad = bce_with_logits(np.full((4,), 50.0), np.ones(4))
    assert loss == pytest.approx(0.0, abs=1e-15)
    np.testing.assert_allclose(grad, 0.0, atol=1e-15)


def test_bce_gradient_matches_finite_differences():
    rng = Rng(71)
    z = rng.uniform(-3, 3, (5, 5))
    g = (rng.fill((5, 5)) < 0.5).astype(float)
    err = finite_diff_check(lambda x: bce_with_logits(x, g), z, h=1e-6)
    assert err < 1e-5


def test_bce_rejects_nonbinary_targets():
    with pytest.raises(ValueError, match="binary"):
        bce_with_logits(np.zeros(3), np.array([0.0, 0.5, 1.0]))


def test_bce_rejects_shape_mismatch():
    with pytest.raises(ValueError, match="share a shape"):
        bce_with_logits(np.zeros((2, 2)), np.zeros((2, 3)))


# --- Dice ---------------------------------------------------------------------

def test_dice_saturated_match_near_zero():
    g = (Rng(5).fill((8, 8)) < 0.5).astype(float)
    z = np.where(g > 0, 50.0, -50.0)
    loss, _ = dice_loss(z, g)
    assert loss == pytest.approx(0.0, abs=1e-9)


def test_dice_empty_empty_near_zero():
    loss, _ = dice_loss(np.full((6, 6), -50.0), np.zeros((6, 6)))
    assert loss == pytest.approx(0.0, abs=1e-12)


def test_dice_gradient_matches_finite_differences():
    rng = Rng(81)
    z = rng.uniform(-3, 3, (6, 6))
    g = (rng.fill((6, 6)) < 0.4).astype(float)
    err = finite_diff_check(lambda x: dice_loss(x, g), z, h=1e-6)
    assert err < 1e-5


def test_dice_hand_value_at_zero_logits():
    # p = 0.5 everywhere on 2x2; gt has 2 on-pixels:
    # loss = 1 - (2*1 + 1) / (2 + 2 + 1) = 0.4
    g = np.array([[1.0, 0.0], [0.0, 1.0]])
    loss, _ = dice_loss(np.zeros((2, 2)), g)
    assert loss == pytest.approx(0.4, abs=1e-15)


# --- referent / existence -------------------------------------------------------

def test_referent_all_matched_saturated():
    loss, _ = referent_loss(np.full(6, 50.0), matched_ids=range(6))
    assert loss == pytest.approx(0.0, abs=1e-15)


def test_referent_nonreferent_sample_at_zero():
    loss, _ = referent_loss(np.zeros(10), matched_ids=[])
    assert loss == pytest.approx(LN2, abs=1e-15)


def test_referent_permutation_invariant():
    rng = Rng(17)
    z = rng.uniform(-2, 2, 8)
    matched = [1, 4, 6]
    base, _ = referent_loss(z, matched)
    perm = np.array([3, 1, 7, 0, 5, 2, 6, 4])
    inverse = {old: new for new, old in enumerate(perm)}
    again, _ = referent_loss(z[perm], [inverse[m] for m in matched])
    assert again == pytest.approx(base, rel=1e-15)


def test_nonreferent_loss_closed_forms():
    for exists in (True, False):
        loss, _ = nonreferent_loss(0.0, exists)
        assert loss == pytest.approx(LN2, abs=1e-15)
    loss, _ = nonreferent_loss(50.0, True)
    assert loss == pytest.approx(0.0, abs=1e-15)


def test_nonreferent_grad_sign():
    _, g_pos = nonreferent_loss(2.0, exists=True)
    _, g_neg = nonreferent_loss(-2.0, exists=False)
    assert g_pos < 0  # push logit up toward target 1
    assert g_neg > 0


# --- round / total ----------------------------------------------------------------

def _perfect_round(n_queries=4, shape=(4, 4), t=2):
    rng = Rng(23)
    gt = np.stack([(rng.fill(shape) < 0.5).astype(float) for _ in range(t)])
    masks = np.full((n_queries,) + shape, -50.0)
    for q in range(t):
        masks[q] = np.where(gt[q] > 0, 50.0, -50.0)
    referent = np.full(n_queries, -50.0)
    referent[:t] = 50.0
    pairs = [(q, q) for q in range(t)]
    return masks, referent, gt, pairs


def test_round_loss_perfect_is_tiny():
    masks, referent, gt, pairs = _perfect_round()
    rep = round_loss(masks, referent, gt, pairs, existence_logit=50.0, exists=True)
    assert rep.total == pytest.approx(0.0, abs=1e-6)


def test_round_loss_weight_projection():
    masks, referent, gt, pairs = _perfect_round()
    w = LossWeights(mask=0.0, referent=0.0, existence=1.0)
    rep = round_loss(masks, referent, gt, pairs, w, existence_logit=0.0, exists=True)
    assert rep.total == pytest.approx(LN2, abs=1e-15)
    assert rep.existence_term == pytest.approx(LN2, abs=1e-15)


def test_round_loss_spreadsheet_case():
    # one query, one 2x2 target, everything at logit 0:
    #   mask BCE = ln 2, Dice = 0.4, referent BCE = ln 2, existence BCE = ln 2
    gt = np.array([[[1.0, 0.0], [0.0, 1.0]]])
    rep = round_loss(
        np.zeros((1, 2, 2)), np.zeros(1), gt, [(0, 0)],
        existence_logit=0.0, exists=True,
    )
    assert rep.mask_term == pytest.approx(LN2 + 0.4, abs=1e-12)
    assert rep.referent_term == pytest.approx(LN2, abs=1e-15)
    assert rep.existence_term == pytest.approx(LN2, abs=1e-15)
    assert rep.total == pytest.approx(3 * LN2 + 0.4, abs=1e-12)


def test_round_loss_nonreferent_sample_has_no_mask_term():
    rep = round_loss(np.zeros((3, 2, 2)), np.zeros(3), np.zeros((0, 2, 2)), [],
                     existence_logit=0.0, exists=False)
    assert rep.mask_term == 0.0
    assert rep.referent_term == pytest.approx(LN2, abs=1e-15)


def test_round_loss_requires_exists_with_logit():
    with pytest.raises(ValueError):
        round_loss(np.zeros((1, 2, 2)), np.zeros(1), np.zeros((0, 2, 2)), [],
                   existence_logit=0.0)


def test_total_loss_single_round_ignores_aux():
    assert total_loss([3.0], aux_weight=0.2) == 3.0
    assert total_loss([3.0], aux_weight=0.0) == 3.0


def test_total_loss_hand_case_exact():
    assert total_loss([1.0, 1.0, 1.0], aux_weight=0.2) == 1.4


def test_total_loss_zero_aux_keeps_final():
    assert total_loss([9.0, 8.0, 2.5], aux_weight=0.0) == 2.5


def test_total_loss_linear_in_each_round():
    base = total_loss([1.0, 2.0, 3.0], aux_weight=0.2)
    bumped = total_loss([1.0 + 10.0, 2.0, 3.0], aux_weight=0.2)
    assert bumped - base == pytest.approx(0.2 * 10.0, rel=1e-15)
    bumped_last = total_loss([1.0, 2.0, 3.0 + 10.0], aux_weight=0.2)
    assert bumped_last - base == pytest.approx(10.0, rel=1e-15)


def test_total_loss_rejects_empty():
    with pytest.raises(ValueError):
        total_loss([])


# --- finite differences -------------------------------------------------------------

def test_finite_diff_quadratic_sanity():
    def quad(x):
        return float((x * x).sum()), 2.0 * x

    # a quadratic has zero truncation error, so the largest permitted step
    # minimizes roundoff and the check is essentially exact
    err = finite_diff_check(quad, Rng(99).uniform(-2, 2, (4, 3)), h=1e-4)
    assert err < 1e-9


def test_finite_diff_detects_wrong_gradient():
    def wrong(x):
        return float((x * x).sum()), 3.0 * x  # deliberately off

    err = finite_diff_check(wrong, Rng(100).uniform(1, 2, (3,)), h=1e-6)
    assert err > 0.2


def test_finite_diff_rejects_bad_step():
    with pytest.raises(ValueError):
        finite_diff_check(lambda x: (0.0, x), np.zeros(2), h=1e-2)
