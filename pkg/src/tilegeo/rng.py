"""Seeded random streams.

Every random draw in the package comes from a Philox-4x64 counter-based
generator keyed by ``(splitmix64(seed), stream)``. Raw 64-bit words are turned
into uniforms on the open interval (0, 1) with 53 bits of mantissa, and into
standard normals through the inverse normal CDF (Cephes ``ndtri`` rational
approximation). One uniform is consumed per normal, so draw counts never
depend on the values drawn.

Stream ids in use:

``LOCATIONS`` (0)
    coordinates of randomly placed locations.
``NOISE`` (1)
    the standard normal vector multiplied by the Cholesky factor.
"""

import numpy as np
from numpy.random import Philox
from scipy.special import ndtri

LOCATIONS = 0
NOISE = 1

_MASK64 = (1 << 64) - 1


def splitmix64(value):
    """One round of the SplitMix64 finaliser, used to spread user seeds."""
    z = (value + 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


class RandomStream:
    """Deterministic stream of uniforms and normals for one (seed, stream) pair."""

    def __init__(self, seed, stream=0):
        seed = int(seed)
        self.seed = seed
        self.stream = int(stream)
        key = np.array([splitmix64(seed & _MASK64), self.stream & _MASK64], dtype=np.uint64)
        self._bitgen = Philox(key=key)

    def raw(self, k):
        return self._bitgen.random_raw(int(k)).astype(np.uint64, copy=False)

    def uniforms(self, k):
        """``k`` doubles uniformly distributed on the open interval (0, 1)."""
        words = self.raw(k) >> np.uint64(11)
        return (words.astype(np.float64) + 0.5) * 2.0**-53

    def normals(self, k):
        """``k`` standard normal draws by inverse-CDF transform."""
        return ndtri(self.uniforms(k))
