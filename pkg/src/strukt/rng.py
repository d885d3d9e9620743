"""PCG32 (XSH-RR, 64-bit state) with polar-method Gaussian variates.

Implemented directly rather than through numpy's generators so that noise
streams are fixed by the published PCG32 recurrence and the rejection order
of the polar method, independent of library versions.
"""

import math

import numpy as np

_MULT = 6364136223846793005
_MASK64 = (1 << 64) - 1
_MASK32 = (1 << 32) - 1
DEFAULT_STREAM = 0xDA3E39CB94B95BDB


class PCG32:
    """Seeded 32-bit generator (pcg32_srandom_r seeding)."""

    def __init__(self, seed: int, stream: int = DEFAULT_STREAM):
        if not 0 <= seed <= _MASK64:
            raise ValueError("seed must be an unsigned 64-bit integer")
        self.state = 0
        self.inc = ((stream << 1) | 1) & _MASK64
        self.next_u32()
        self.state = (self.state + seed) & _MASK64
        self.next_u32()
        self._spare = None

    def next_u32(self) -> int:
        old = self.state
        self.state = (old * _MULT + self.inc) & _MASK64
        xorshifted = (((old >> 18) ^ old) >> 27) & _MASK32
        rot = old >> 59
        return ((xorshifted >> rot) | (xorshifted << ((-rot) & 31))) & _MASK32

    def uniform(self) -> float:
        """Uniform double in [0, 1) with 32 bits of resolution."""
        return self.next_u32() * (1.0 / 4294967296.0)

    def normal(self) -> float:
        """Standard normal variate (Marsaglia polar method).

        Each accepted pair yields two variates; the second is returned on the
        following call.
        """
        if self._spare is not None:
            z, self._spare = self._spare, None
            return z
        while True:
            u = 2.0 * self.uniform() - 1.0
            v = 2.0 * self.uniform() - 1.0
            s = u * u + v * v
            if 0.0 < s < 1.0:
                break
        factor = math.sqrt(-2.0 * math.log(s) / s)
        self._spare = v * factor
        return u * factor

    def normals(self, n: int) -> np.ndarray:
        return np.fromiter((self.normal() for _ in range(n)), dtype=np.float64, count=n)

    def uniforms(self, n: int) -> np.ndarray:
        return np.fromiter((self.uniform() for _ in range(n)), dtype=np.float64, count=n)

    def below(self, bound: int) -> int:
        """Unbiased integer in ``[0, bound)`` (PCG's bounded rand)."""
        if bound <= 0:
            raise ValueError("bound must be positive")
        threshold = ((1 << 32) - bound) % bound
        while True:
            r = self.next_u32()
            if r >= threshold:
                return r % bound
