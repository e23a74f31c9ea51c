"""Seed expansion and block-drawn random streams.

A master seed and a replica index are mixed with splitmix64 into the seed of
an independent ``numpy.random.Generator``. Simulators consume randomness in
fixed-size blocks, so a trajectory is a function of the seed alone and not of
how the caller slices the horizon into checkpoints.
"""
from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
DEFAULT_BLOCK = 1 << 16


def splitmix64(x: int) -> int:
    z = (x + GOLDEN) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def derive_seed(seed: int, replica: int, stream: int = 0) -> int:
    """64-bit substream seed for (master seed, replica index, stream tag)."""
    s = splitmix64(seed & MASK64)
    s = splitmix64(s ^ (replica & MASK64))
    return splitmix64(s ^ ((stream * GOLDEN) & MASK64))


def replica_rng(seed: int, replica: int, stream: int = 0) -> np.random.Generator:
    return np.random.default_rng(derive_seed(seed, replica, stream))


class BlockStream:
    """Serve draws from fixed-size blocks produced by ``draw(rng, size)``.

    ``draw`` returns a tuple of equal-length arrays; :meth:`take` hands out
    the next ``m`` entries of each, pulling new blocks as needed.
    """

    def __init__(self, rng, draw, block: int = DEFAULT_BLOCK):
        self.rng = rng
        self._draw = draw
        self.block = block
        self._buf = None
        self._pos = 0

    def _refill(self):
        self._buf = self._draw(self.rng, self.block)
        self._pos = 0

    def take(self, m: int):
        parts = []
        while m > 0:
            if self._buf is None or self._pos == self.block:
                self._refill()
            j = min(m, self.block - self._pos)
            parts.append(tuple(a[self._pos:self._pos + j] for a in self._buf))
            self._pos += j
            m -= j
        if not parts:
            return tuple(a[:0] for a in self._draw(self.rng, 0))
        if len(parts) == 1:
            return parts[0]
        return tuple(np.concatenate(cols) for cols in zip(*parts))

    def __iter__(self):
        """Yield one draw tuple at a time (slow path for reference code)."""
        while True:
            if self._buf is None or self._pos == self.block:
                self._refill()
            i = self._pos
            self._pos += 1
            yield tuple(a[i].item() for a in self._buf)


def kcip_draws(n: int):
    def draw(rng, size):
        return rng.integers(0, n, size), rng.random(size)
    return draw


def se_draws(num_edges: int):
    def draw(rng, size):
        return (rng.integers(0, num_edges, size),)
    return draw


def coalescent_draws(degree: int):
    def draw(rng, size):
        return rng.random(size), rng.random(size), rng.integers(0, degree, size)
    return draw
