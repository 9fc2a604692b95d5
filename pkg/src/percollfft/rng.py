"""Seeded xoshiro256** generator (splitmix64 state expansion).

Constants follow the public-domain reference code by Blackman and Vigna, so
streams can be reproduced by any other implementation of the same generator.
Scalar draws run in Python; bulk draws go through :mod:`percollfft.kernels`.
"""

import math

import numpy as np

from . import kernels

MASK64 = (1 << 64) - 1


def splitmix64(x):
    """One splitmix64 step. Returns ``(new_state, output)``."""
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return x, z ^ (z >> 31)


def fnv1a64(text):
    """Stable 64-bit hash of a string, used to key per-item streams."""
    h = 0xCBF29CE484222325
    for byte in text.encode("utf-8"):
        h = ((h ^ byte) * 0x100000001B3) & MASK64
    return h


def derive_seed(seed, *keys):
    """Mix a master seed with integer or string keys into a child seed."""
    x = seed & MASK64
    for key in keys:
        if isinstance(key, str):
            key = fnv1a64(key)
        x, out = splitmix64(x ^ (key & MASK64))
        x = out
    return x


class Xoshiro256:
    """xoshiro256** stream.

    Parameters
    ----------
    seed : int
        Any non-negative integer; expanded to 256 bits with splitmix64.
    state : sequence of 4 ints, optional
        Raw state, overriding ``seed`` (used by reference vectors).
    """

    def __init__(self, seed=0, state=None):
        if state is None:
            words = []
            x = seed & MASK64
            for _ in range(4):
                x, out = splitmix64(x)
                words.append(out)
            state = words
        if not any(state):
            raise ValueError("xoshiro256** state must not be all zero")
        self.state = np.array([w & MASK64 for w in state], dtype=np.uint64)
        self._spare = None

    def next_u64(self):
        return int(kernels.xoshiro_fill_u64(self.state, 1)[0])

    def u64_array(self, n):
        return kernels.xoshiro_fill_u64(self.state, int(n))

    def random(self):
        """Uniform float in [0, 1) with 53 random bits."""
        return (self.next_u64() >> 11) * (1.0 / 9007199254740992.0)

    def random_array(self, n):
        return kernels.xoshiro_fill_double(self.state, int(n))

    def integers(self, low, high):
        """Uniform integer in ``[low, high)`` by unbiased rejection sampling."""
        span = high - low
        if span <= 0:
            raise ValueError(f"empty range [{low}, {high})")
        limit = (1 << 64) - ((1 << 64) % span)
        while True:
            v = self.next_u64()
            if v < limit:
                return low + v % span

    def shuffle(self, items):
        """In-place Fisher-Yates shuffle of a list."""
        for i in range(len(items) - 1, 0, -1):
            j = self.integers(0, i + 1)
            items[i], items[j] = items[j], items[i]
        return items

    def normal_array(self, n):
        """Standard normals by the Box-Muller transform, two per uniform pair."""
        m = (n + 1) // 2
        u = self.random_array(2 * m)
        u1 = 1.0 - u[0::2]  # (0, 1], keeps log finite
        r = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * math.pi * u[1::2]
        z = np.empty(2 * m)
        z[0::2] = r * np.cos(theta)
        z[1::2] = r * np.sin(theta)
        return z[:n]

    def spawn(self, *keys):
        """Independent child stream keyed by ``keys``."""
        return Xoshiro256(derive_seed(self.next_u64(), *keys))
