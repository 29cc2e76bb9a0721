"""Portable deterministic shuffling.

SplitMix64 (Steele, Lea & Flood 2014) drives an in-place Fisher-Yates
shuffle. Both are simple enough to reimplement bit-for-bit in any
language, so a (seed, n) pair fixes a permutation everywhere:

    state <- state + 0x9E3779B97F4A7C15            (mod 2**64)
    z <- (state ^ (state >> 30)) * 0xBF58476D1CE4E5B9
    z <- (z ^ (z >> 27)) * 0x94D049BB133111EB
    out <- z ^ (z >> 31)

    for i = n-1 down to 1:
        j <- next() mod (i + 1)
        swap(a[i], a[j])

The modulo reduction has a bias below 2**-40 for any n we care about.
"""

from __future__ import annotations

_MASK64 = (1 << 64) - 1


class SplitMix64:
    def __init__(self, seed: int):
        self.state = seed & _MASK64

    def next(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & _MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        return z ^ (z >> 31)


def permutation(n: int, seed: int) -> list[int]:
    """Return a Fisher-Yates shuffle of ``range(n)`` driven by SplitMix64."""
    out = list(range(n))
    gen = SplitMix64(seed)
    for i in range(n - 1, 0, -1):
        j = gen.next() % (i + 1)
        out[i], out[j] = out[j], out[i]
    return out
