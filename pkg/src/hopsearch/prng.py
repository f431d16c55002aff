"""Deterministic, platform-independent PRNG for weight initialization.

xoshiro256** (Blackman & Vigna) with splitmix64 seed expansion, computed
in pure integer arithmetic so the stream is bit-identical everywhere.

Constants:
  splitmix64: increment 0x9E3779B97F4A7C15,
              mixers 0xBF58476D1CE4E5B9 and 0x94D049BB133111EB
  xoshiro256**: output rotl(s1 * 5, 7) * 9, shift 17, rotations 7 and 45
"""

from __future__ import annotations

_MASK64 = (1 << 64) - 1


def _rotl(value: int, amount: int) -> int:
    return ((value << amount) | (value >> (64 - amount))) & _MASK64


class SplitMix64:
    """Seed expander; also usable as a tiny standalone generator."""

    def __init__(self, seed: int):
        self.state = seed & _MASK64

    def next_u64(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & _MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        return z ^ (z >> 31)


class Xoshiro256StarStar:
    """64-bit generator with 2^256 - 1 period; state seeded via splitmix64."""

    def __init__(self, seed: int):
        mixer = SplitMix64(seed)
        self.s = [mixer.next_u64() for _ in range(4)]

    def next_u64(self) -> int:
        s0, s1, s2, s3 = self.s
        result = (_rotl((s1 * 5) & _MASK64, 7) * 9) & _MASK64
        t = (s1 << 17) & _MASK64
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = _rotl(s3, 45)
        self.s = [s0, s1, s2, s3]
        return result

    def next_double(self) -> float:
        """Uniform double in [0, 1) from the top 53 bits."""
        return (self.next_u64() >> 11) * 2.0 ** -53

    def uniform(self, low: float, high: float) -> float:
        return low + (high - low) * self.next_double()
