"""Deterministic pseudo-random generation.

Everything random in this package flows through :class:`Rng`, a splitmix64
stream chosen for its tiny, platform-independent definition. The exact
algorithm (all arithmetic modulo 2**64):

    state: a 64-bit word, initialized to the seed
    next():  state += 0x9E3779B97F4A7C15
             z = state
             z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
             z = (z ^ (z >> 27)) * 0x94D049BB133111EB
             return z ^ (z >> 31)

uniform doubles are ``(next() >> 11) * 2.0**-53``, i.e. the top 53 bits of
the stream mapped onto [0, 1). The stream for a given seed is bit-identical
across runs and platforms; seed 0 opens with 0xE220A8397B1DCDAF, the
standard splitmix64 test vector.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15
_MIX_A = 0xBF58476D1CE4E5B9
_MIX_B = 0x94D049BB133111EB

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


def mix64(z: int) -> int:
    """splitmix64 finalizer: two multiply/xorshift rounds on a 64-bit word."""
    z &= _MASK64
    z = ((z ^ (z >> 30)) * _MIX_A) & _MASK64
    z = ((z ^ (z >> 27)) * _MIX_B) & _MASK64
    return z ^ (z >> 31)


def _encode(item):
    # Tagged byte encoding so that e.g. (1, "2") and ("1", 2) hash apart.
    if isinstance(item, bool):
        yield 0x04
        yield int(item)
    elif isinstance(item, int):
        yield 0x01
        yield from (item & _MASK64).to_bytes(8, "little")
    elif isinstance(item, str):
        data = item.encode("utf-8")
        yield 0x02
        yield from len(data).to_bytes(8, "little")
        yield from data
    elif isinstance(item, (tuple, list)):
        yield 0x03
        yield from len(item).to_bytes(8, "little")
        for sub in item:
            yield from _encode(sub)
    else:
        raise TypeError(f"stable_hash cannot encode {type(item).__name__!r}")


def stable_hash(*items) -> int:
    """Order-sensitive 64-bit hash of ints, bools, strings and nested sequences.

    FNV-1a over a tagged byte encoding, finished with :func:`mix64`. Unlike
    builtin ``hash`` the result does not depend on ``PYTHONHASHSEED``, so
    child seeds derived from it are reproducible across processes.
    """
    h = _FNV_OFFSET
    for b in _encode(tuple(items)):
        h = ((h ^ b) * _FNV_PRIME) & _MASK64
    return mix64(h)


class Rng:
    """splitmix64 stream with scalar and vectorized draws.

    ``fill``/``uniform`` advance the stream by exactly one step per value, so
    mixing scalar and array draws never changes the sequence.
    """

    def __init__(self, seed: int):
        self.seed = int(seed) & _MASK64
        self._state = self.seed

    def next_u64(self) -> int:
        self._state = (self._state + _GAMMA) & _MASK64
        return mix64(self._state)

    def fill_u64(self, n: int) -> np.ndarray:
        """Next ``n`` raw 64-bit words as a uint64 array."""
        if n < 0:
            raise ValueError("fill_u64 needs n >= 0")
        steps = np.arange(1, n + 1, dtype=np.uint64) * np.uint64(_GAMMA)
        z = np.uint64(self._state) + steps
        self._state = (self._state + n * _GAMMA) & _MASK64
        z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX_A)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX_B)
        return z ^ (z >> np.uint64(31))

    def random(self) -> float:
        """One double in [0, 1)."""
        return (self.next_u64() >> 11) * 2.0**-53

    def fill(self, shape) -> np.ndarray:
        """Array of doubles in [0, 1) with the given shape."""
        shape = (shape,) if isinstance(shape, int) else tuple(shape)
        n = int(np.prod(shape)) if shape else 1
        vals = (self.fill_u64(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53
        return vals.reshape(shape)

    def uniform(self, low: float, high: float, shape=None):
        if shape is None:
            return low + (high - low) * self.random()
        return low + (high - low) * self.fill(shape)

    def below(self, n: int) -> int:
        """Integer in [0, n) via the multiply-shift bound trick."""
        if n <= 0:
            raise ValueError("below needs n >= 1")
        return (self.next_u64() * n) >> 64

    def randint(self, low: int, high: int) -> int:
        """Integer in [low, high)."""
        if high <= low:
            raise ValueError(f"empty range [{low}, {high})")
        return low + self.below(high - low)

    def bernoulli(self, p: float) -> bool:
        return self.random() < p

    def spawn(self, *keys) -> "Rng":
        """Child stream keyed off the original seed, independent of draws made."""
        return Rng(stable_hash(self.seed, *keys))

    def __repr__(self):
        return f"Rng(seed={self.seed})"
