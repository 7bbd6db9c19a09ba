"""Deterministic PRNG used for dataset subsampling.

Subsampling must produce identical index sequences for a given 64-bit seed
regardless of platform or language, so it is pinned to xoshiro256** (state
seeded through splitmix64) rather than whatever generator the host runtime
ships. Bounded integers use unbiased rejection sampling.
"""

from __future__ import annotations

_MASK64 = 0xFFFFFFFFFFFFFFFF


def _splitmix64_next(state: int) -> tuple[int, int]:
    state = (state + 0x9E3779B97F4A7C15) & _MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31), state


def derive_seeds(seed: int, count: int) -> list[int]:
    """Expand one seed into `count` independent 64-bit stream seeds."""
    state = seed & _MASK64
    out = []
    for _ in range(count):
        value, state = _splitmix64_next(state)
        out.append(value)
    return out


class Xoshiro256StarStar:
    """xoshiro256** 1.0, state filled from splitmix64(seed)."""

    def __init__(self, seed: int):
        state = seed & _MASK64
        s = []
        for _ in range(4):
            value, state = _splitmix64_next(state)
            s.append(value)
        if not any(s):
            s[0] = 1  # all-zero state is the one invalid configuration
        self._s = s

    def next_uint64(self) -> int:
        s0, s1, s2, s3 = self._s
        result = (((s1 * 5) & _MASK64) << 7 | ((s1 * 5) & _MASK64) >> 57) & _MASK64
        result = (result * 9) & _MASK64
        t = (s1 << 17) & _MASK64
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = ((s3 << 45) | (s3 >> 19)) & _MASK64
        self._s = [s0, s1, s2, s3]
        return result

    def random(self) -> float:
        """Uniform float64 in [0, 1) from the top 53 bits."""
        return (self.next_uint64() >> 11) * (2.0**-53)

    def below(self, bound: int) -> int:
        """Uniform integer in [0, bound), unbiased via rejection."""
        if bound <= 0:
            raise ValueError("bound must be positive")
        threshold = (1 << 64) % bound  # reject the biased low tail
        while True:
            x = self.next_uint64()
            if x >= threshold:
                return x % bound

    def sample_indices(self, total: int, count: int) -> list[int]:
        """Draw `count` distinct indices from range(total) without replacement.

        Partial Fisher-Yates: position i swaps with a uniform position in
        [i, total); the first `count` slots are the sample, in draw order.
        """
        if count > total:
            raise ValueError(f"cannot draw {count} from {total}")
        idx = list(range(total))
        for i in range(count):
            j = i + self.below(total - i)
            idx[i], idx[j] = idx[j], idx[i]
        return idx[:count]
