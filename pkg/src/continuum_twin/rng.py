"""SplitMix64 streams for reproducible scenario synthesis."""

from __future__ import annotations

import hashlib
import math

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15


def mix64(z: int) -> int:
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9 & MASK64
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB & MASK64
    return z ^ (z >> 31)


class SplitMix64:
    def __init__(self, seed: int):
        self.state = seed & MASK64

    def next_u64(self) -> int:
        self.state = (self.state + GOLDEN) & MASK64
        return mix64(self.state)

    def random(self) -> float:
        """Uniform in [0, 1) with 53 bits."""
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def uniform(self, lo: float, hi: float) -> float:
        return lo + (hi - lo) * self.random()

    def randint(self, lo: int, hi: int) -> int:
        """Uniform integer in [lo, hi]."""
        span = hi - lo + 1
        return lo + self.next_u64() % span

    def exponential(self, rate: float) -> float:
        # inverse CDF; 1 - U lies in (0, 1]
        return -math.log(1.0 - self.random()) / rate

    def choice(self, seq):
        return seq[self.randint(0, len(seq) - 1)]

    def split(self, label: str) -> "SplitMix64":
        """Independent child stream keyed by ``label``."""
        h = int.from_bytes(hashlib.blake2b(label.encode(), digest_size=8).digest(), "little")
        return SplitMix64(mix64(self.state ^ h))
