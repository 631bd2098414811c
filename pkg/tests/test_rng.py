import numpy as np
import pytest
from hypothesis import given, strategies as st

from loopseg.rng import Rng, stable_hash

# canonical splitmix64 outputs for seed 0
SPLITMIX_SEED0 = (0xE220A8397B1DCDAF, 0x6E789E6AA1B965F4, 0x06C45D188009454F)


def test_seed0_matches_reference_vector():
    rng = Rng(0)
    assert tuple(rng.next_u64() for _ in range(3)) == SPLITMIX_SEED0


def test_same_seed_same_stream():
    a = Rng(987654321)
    b = Rng(987654321)
    assert [a.next_u64() for _ in range(1000)] == [b.next_u64() for _ in range(1000)]


def test_vectorized_fill_matches_scalar_stream():
    a = Rng(13)
    b = Rng(13)
    scalar = [b.next_u64() for _ in range(257)]
    arr = a.fill_u64(257)
    assert [int(x) for x in arr] == scalar
    # and the stream continues at the same point
    assert a.next_u64() == b.next_u64()


def test_random_in_unit_interval():
    rng = Rng(5)
    vals = rng.fill(10_000)
    assert np.all(vals >= 0.0) and np.all(vals < 1.0)


def test_below_range_and_determinism():
    rng = Rng(99)
    draws = [rng.below(7) for _ in range(2000)]
    assert set(draws) <= set(range(7))
    other = Rng(99)
    assert draws == [other.below(7) for _ in range(2000)]


def test_below_rejects_empty_range():
    with pytest.raises(ValueError):
        Rng(1).below(0)


def test_bernoulli_rate_concentrates():
    rng = Rng(2024)
    hits = sum(rng.bernoulli(0.09) for _ in range(10_000))
    assert 0.08 <= hits / 10_000 <= 0.10


def test_spawn_ignores_draw_position():
    parent = Rng(77)
    child_before = parent.spawn("x", 1)
    parent.fill(100)
    child_after = parent.spawn("x", 1)
    assert child_before.seed == child_after.seed
    assert parent.spawn("x", 2).seed != child_before.seed


def test_stable_hash_pinned_values():
    # regression pins: these must never drift across platforms or releases
    assert stable_hash(1, "two", (3, 4)) == 15275622326733607946
    assert stable_hash("visual", 42, 7) == 3808322033893548428


def test_stable_hash_discriminates_types_and_order():
    assert stable_hash(1, "2") != stable_hash("1", 2)
    assert stable_hash("a", "b") != stable_hash("b", "a")
    assert stable_hash(True) != stable_hash(1)
    assert stable_hash([1, 2]) == stable_hash((1, 2))


def test_stable_hash_rejects_unknown_types():
    with pytest.raises(TypeError):
        stable_hash(object())


@given(st.integers(min_value=0, max_value=2**64 - 1))
def test_uniform_bounds_hold_for_any_seed(seed):
    rng = Rng(seed)
    x = rng.uniform(-2.0, 3.0)
    assert -2.0 <= x < 3.0
