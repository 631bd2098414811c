import numpy as np
import pytest
from hypothesis import given, strategies as st

from loopseg.masks import (
    RleMask,
    decode_rle,
    downsample_majority,
    encode_rle,
    rle_from_json,
    rle_to_json,
    union_masks,
)
from loopseg.rng import Rng


def test_all_zero_mask():
    rle = encode_rle(np.zeros((2, 2)))
    assert rle.runs == (4,)


def test_all_one_mask():
    rle = encode_rle(np.ones((2, 2)))
    assert rle.runs == (0, 4)


def test_checkerboard_hand_case():
    rle = encode_rle(np.array([[1, 0], [0, 1]]))
    assert rle.runs == (0, 1, 2, 1)


def test_round_trip_random_masks():
    rng = Rng(31337)
    for _ in range(1000):
        h = 1 + rng.below(12)
        w = 1 + rng.below(12)
        mask = (rng.fill((h, w)) < 0.5).astype(np.uint8)
        again = decode_rle(encode_rle(mask))
        np.testing.assert_array_equal(again, mask)


@given(st.integers(1, 9), st.integers(1, 9), st.integers(0, 2**32))
def test_round_trip_property(h, w, seed):
    mask = (Rng(seed).fill((h, w)) < 0.3).astype(np.uint8)
    np.testing.assert_array_equal(decode_rle(encode_rle(mask)), mask)


def test_decode_rejects_bad_sum():
    with pytest.raises(ValueError, match="sum"):
        decode_rle(RleMask(2, 2, (3,)))


def test_decode_rejects_interior_zero_run():
    with pytest.raises(ValueError, match="leading"):
        decode_rle(RleMask(2, 2, (1, 1, 0, 2)))


def test_decode_rejects_negative_run():
    with pytest.raises(ValueError):
        decode_rle(RleMask(2, 2, (-1, 5)))


def test_json_round_trip():
    mask = np.array([[1, 1, 0], [0, 1, 0]])
    rle = encode_rle(mask)
    again = rle_from_json(rle_to_json(rle))
    assert again == rle
    np.testing.assert_array_equal(decode_rle(again), mask)


def test_encode_rejects_nonbinary():
    with pytest.raises(ValueError, match="binary"):
        encode_rle(np.array([[0.5, 1.0]]))


def test_downsample_majority_half_rule():
    block_on = np.array([[1, 1], [0, 0]])   # exactly half -> on
    block_off = np.array([[1, 0], [0, 0]])  # under half -> off
    mask = np.block([[block_on, block_off], [block_off, block_on]])
    out = downsample_majority(mask, 2, 2)
    np.testing.assert_array_equal(out, [[1, 0], [0, 1]])


def test_downsample_identity_when_same_size():
    mask = (Rng(5).fill((6, 6)) < 0.5).astype(np.uint8)
    np.testing.assert_array_equal(downsample_majority(mask, 6, 6), mask)


def test_downsample_rejects_uneven_factor():
    with pytest.raises(ValueError):
        downsample_majority(np.zeros((6, 6)), 4, 4)


def test_union_masks():
    a = np.array([[1, 0], [0, 0]])
    b = np.array([[0, 0], [0, 1]])
    np.testing.assert_array_equal(union_masks([a, b]), [[1, 0], [0, 1]])


def test_union_empty_needs_shape():
    out = union_masks([], shape=(3, 2))
    assert out.shape == (3, 2) and not out.any()
    with pytest.raises(ValueError):
        union_masks([])
