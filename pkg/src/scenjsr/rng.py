"""Deterministic random streams for every sampling step in this package.

The generator is xoshiro256** (a 64-bit shift-register family generator)
seeded through the splitmix64 finalizer, so each experiment reproduces bit
for bit from a single integer seed regardless of the numpy version
installed.  Independent child streams, one per trial or sweep row, come
from :meth:`Rng.derive`, which hashes (parent seed, *path) with
:func:`mix64`.

Draw order is part of the reproducibility contract: Gaussian variates use
the Box-Muller transform and the second variate of each pair is cached, so
interleaving calls on one stream is deterministic but order-sensitive.
"""

import math

import numpy as np

__all__ = ["Rng", "mix64"]

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_TWO_PI = 2.0 * math.pi


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & _MASK64


def _scramble(x: int) -> int:
    # splitmix64 output finalizer: full-avalanche mix of one 64-bit word.
    x &= _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def mix64(*words: int) -> int:
    """Fold integers into one 64-bit key: acc <- scramble((acc + golden) ^ w)."""
    acc = 0
    for w in words:
        acc = _scramble(((acc + _GOLDEN) & _MASK64) ^ (w & _MASK64))
    return acc


class Rng:
    """xoshiro256** stream with explicit seeding and stream derivation."""

    __slots__ = ("seed", "_s", "_gauss")

    def __init__(self, seed: int):
        self.seed = int(seed)
        state = mix64(self.seed)
        words = []
        for _ in range(4):
            state = (state + _GOLDEN) & _MASK64
            words.append(_scramble(state))
        if not any(words):  # all-zero state is the one forbidden seed
            words[0] = _GOLDEN
        self._s = words
        self._gauss = None

    def derive(self, *path: int) -> "Rng":
        """Independent child stream keyed by (this stream's seed, *path)."""
        return Rng(mix64(self.seed, *path))

    def u64(self) -> int:
        """Next raw 64-bit output."""
        s0, s1, s2, s3 = self._s
        out = (_rotl((s1 * 5) & _MASK64, 7) * 9) & _MASK64
        t = (s1 << 17) & _MASK64
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = _rotl(s3, 45)
        self._s = [s0, s1, s2, s3]
        return out

    def random(self) -> float:
        """Uniform double in [0, 1) with 53 random bits."""
        return (self.u64() >> 11) * 2.0**-53

    def _uniform_pos(self) -> float:
        # Uniform in (0, 1]; safe as a log argument.
        return ((self.u64() >> 11) + 1) * 2.0**-53

    def normal(self) -> float:
        """Standard Gaussian (Box-Muller, second variate cached)."""
        if self._gauss is not None:
            z, self._gauss = self._gauss, None
            return z
        r = math.sqrt(-2.0 * math.log(self._uniform_pos()))
        theta = _TWO_PI * self.random()
        self._gauss = r * math.sin(theta)
        return r * math.cos(theta)

    def normals(self, k: int) -> np.ndarray:
        """Vector of k independent standard Gaussians."""
        return np.array([self.normal() for _ in range(k)])

    def randint(self, bound: int) -> int:
        """Uniform integer in [0, bound), by rejection on the top range."""
        if bound <= 0:
            raise ValueError(f"bound must be positive, got {bound}")
        span = _MASK64 + 1
        limit = span - span % bound
        while True:
            v = self.u64()
            if v < limit:
                return v % bound

    def __repr__(self) -> str:
        return f"Rng(seed={self.seed})"
