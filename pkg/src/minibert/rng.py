"""Deterministic, portable random streams.

Every random decision in data generation (sentence-order coin flips, word
selection, masking actions) comes from a SplitMix64 stream whose starting
state is a 64-bit BLAKE2b digest of the decision's key. The algorithm is
simple enough to re-implement anywhere, so shards can be reproduced
bit-for-bit outside this package.
"""

from __future__ import annotations

import hashlib
from typing import MutableSequence, TypeVar

RNG_ID = "splitmix64+blake2b64-key/v1"

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15

T = TypeVar("T")


def hash64(*parts: object) -> int:
    """Stable 64-bit hash of a tuple of values (joined by U+001F)."""
    data = "\x1f".join(str(p) for p in parts).encode("utf-8")
    return int.from_bytes(hashlib.blake2b(data, digest_size=8).digest(), "little")


class SplitMix64:
    """SplitMix64 generator (Steele, Lea & Flood 2014 constants)."""

    __slots__ = ("state",)

    def __init__(self, state: int) -> None:
        self.state = state & _MASK64

    @classmethod
    def from_key(cls, *parts: object) -> "SplitMix64":
        return cls(hash64(*parts))

    def next_u64(self) -> int:
        self.state = (self.state + _GOLDEN) & _MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        return z ^ (z >> 31)

    def random(self) -> float:
        """Uniform float in [0, 1) with 53 random bits."""
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def randbelow(self, n: int) -> int:
        """Uniform integer in [0, n), unbiased via rejection."""
        if n <= 0:
            raise ValueError(f"randbelow needs n > 0, got {n}")
        limit = (1 << 64) - ((1 << 64) % n)
        while True:
            x = self.next_u64()
            if x < limit:
                return x % n

    def coin(self) -> bool:
        return self.random() < 0.5

    def shuffle(self, items: MutableSequence[T]) -> None:
        """In-place Fisher-Yates shuffle (high index first)."""
        for i in range(len(items) - 1, 0, -1):
            j = self.randbelow(i + 1)
            items[i], items[j] = items[j], items[i]
