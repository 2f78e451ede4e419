"""Portable deterministic 64-bit generator.

The simulator's only source of randomness. Uses the splitmix64 update so the
sequence, and therefore every trace digest, is reproducible from the seed in
any implementation language:

    state = (state + 0x9E3779B97F4A7C15) mod 2^64
    z = state
    z = ((z xor (z >> 30)) * 0xBF58476D1CE4E5B9) mod 2^64
    z = ((z xor (z >> 27)) * 0x94D049BB133111EB) mod 2^64
    output = z xor (z >> 31)

Test vectors (first three outputs):

    seed 0          -> e220a8397b1dcdaf, 6e789e6aa1b965f4, 06c45d188009454f
    seed 42         -> bdd732262feb6e95, 28efe333b266f103, 47526757130f9f52
    seed 2^64 - 1   -> e4d971771b652c20, e99ff867dbf682c9, 382ff84cb27281e9

Derived draws (``randrange``, ``chance``) each consume exactly one output.
"""

from __future__ import annotations

_MASK = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB


class SplitMix64:
    def __init__(self, seed: int) -> None:
        self.state = seed & _MASK

    def next_u64(self) -> int:
        self.state = (self.state + _GAMMA) & _MASK
        z = self.state
        z = ((z ^ (z >> 30)) * _MIX1) & _MASK
        z = ((z ^ (z >> 27)) * _MIX2) & _MASK
        return z ^ (z >> 31)

    def randrange(self, lo: int, hi: int) -> int:
        """Uniform-ish integer in [lo, hi], inclusive. One draw."""
        if hi < lo:
            raise ValueError(f"empty range [{lo}, {hi}]")
        span = hi - lo + 1
        return lo + self.next_u64() % span

    def chance(self, p: float) -> bool:
        """True with probability p. One draw; p outside [0,1] is clamped."""
        if p <= 0.0:
            self.next_u64()
            return False
        if p >= 1.0:
            self.next_u64()
            return True
        return self.next_u64() < p * 2.0**64

    def choice(self, items):
        """Pick one element of a non-empty sequence. One draw."""
        if not items:
            raise ValueError("choice from empty sequence")
        return items[self.next_u64() % len(items)]


FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3


def fnv1a64(data: bytes, state: int = FNV_OFFSET) -> int:
    """64-bit FNV-1a, used for trace digests. Printed as 16 hex digits."""
    for b in data:
        state = ((state ^ b) * FNV_PRIME) & _MASK
    return state
