"""Deterministic 64-bit RNG (splitmix64) with labeled substreams.

Every piece of randomness in the workbench flows from one root seed through
`derive`, so runs are reproducible bit-for-bit across platforms and the numba
kernel can reproduce the same sequence from the same stream state.
"""

from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1

_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB


def splitmix64(state: int) -> tuple[int, int]:
    """Advance one splitmix64 step. Returns (new_state, output)."""
    state = (state + _GAMMA) & MASK64
    z = state
    z = ((z ^ (z >> 30)) * _MIX1) & MASK64
    z = ((z ^ (z >> 27)) * _MIX2) & MASK64
    z ^= z >> 31
    return state, z


def _label_u64(label) -> int:
    if isinstance(label, int):
        return label & MASK64
    # FNV-1a over UTF-8, stable across runs/platforms.
    h = 0xCBF29CE484222325
    for b in str(label).encode("utf-8"):
        h = ((h ^ b) * 0x100000001B3) & MASK64
    return h


def derive(seed: int, *labels) -> int:
    """Derive a child seed from a root seed and a label path."""
    s = seed & MASK64
    for label in labels:
        s, out = splitmix64(s ^ _label_u64(label))
        s = out
    return s


def bulk_u64(seed: int, n: int) -> np.ndarray:
    """Vectorized splitmix64: element i equals the (i+1)-th `Stream(seed).u64()`.

    splitmix64's state advances by a fixed additive constant, so the whole
    sequence can be produced from `seed + (i+1) * GAMMA` without a Python loop.
    """
    idx = np.arange(1, n + 1, dtype=np.uint64)
    z = np.uint64(seed & MASK64) + idx * np.uint64(_GAMMA)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
    return z ^ (z >> np.uint64(31))


def bulk_bits(seed: int, n: int) -> np.ndarray:
    """n independent fair bits as a uint64 array of 0/1 values."""
    return bulk_u64(seed, n) >> np.uint64(63)


class Stream:
    """Sequential splitmix64 stream."""

    __slots__ = ("seed", "state")

    def __init__(self, seed: int):
        self.seed = seed & MASK64
        self.state = seed & MASK64

    def u64(self) -> int:
        self.state, z = splitmix64(self.state)
        return z

    def bit(self) -> int:
        return self.u64() >> 63

    def bits(self, n: int) -> int:
        """n random bits (n <= 64)."""
        return self.u64() >> (64 - n) if n else 0

    def below(self, n: int) -> int:
        """Uniform integer in [0, n). Unbiased enough for workloads (n << 2^64)."""
        return self.u64() % n

    def choice(self, seq):
        return seq[self.below(len(seq))]

    def shuffle(self, items: list) -> None:
        for i in range(len(items) - 1, 0, -1):
            j = self.below(i + 1)
            items[i], items[j] = items[j], items[i]

    def spawn(self, *labels) -> "Stream":
        """Independent substream; derivation depends on the original seed only,
        not on how much of this stream was consumed."""
        return Stream(derive(self.seed, *labels))
