"""The discrete torus Z_L^d with dense integer vertex labels.

Vertex ``i`` has coordinates given by the mixed-radix digits of ``i`` in base
``L``, coordinate 0 least significant.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import ConfigError

MAX_VERTICES = 2**31 - 1


@dataclass(frozen=True)
class TorusLattice:
    L: int
    d: int
    n: int = field(init=False)
    neighbor_table: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        n = self.L**self.d
        object.__setattr__(self, "n", n)
        table = _neighbor_table(self.L, self.d)
        table.setflags(write=False)
        object.__setattr__(self, "neighbor_table", table)

    @cached_property
    def neighbor_masks(self) -> tuple:
        """Neighbourhood of each site as an int bit mask (built on first use)."""
        return tuple(sum(1 << int(u) for u in row) for row in self.neighbor_table)

    @property
    def degree(self) -> int:
        return 2 * self.d

    @property
    def num_edges(self) -> int:
        return self.n * self.d

    def coords(self, v: int) -> tuple[int, ...]:
        self._check(v)
        out = []
        for _ in range(self.d):
            v, r = divmod(v, self.L)
            out.append(r)
        return tuple(out)

    def index(self, coords) -> int:
        if len(coords) != self.d:
            raise ConfigError(f"expected {self.d} coordinates, got {len(coords)}")
        v = 0
        for c in reversed(coords):
            v = v * self.L + (int(c) % self.L)
        return v

    def neighbors(self, v: int) -> list[int]:
        self._check(v)
        return [int(u) for u in self.neighbor_table[v]]

    def distance(self, u: int, v: int) -> int:
        self._check(u)
        self._check(v)
        total = 0
        for a, b in zip(self.coords(u), self.coords(v)):
            diff = abs(a - b)
            total += min(diff, self.L - diff)
        return total

    def edges(self) -> list[tuple[int, int]]:
        """Undirected edges as (v, v + e_axis), ordered by (v, axis).

        Edge number ``v * d + axis`` is the pair at that position, which is
        how simulation kernels decode a uniform edge draw.
        """
        step = [self.L**a for a in range(self.d)]
        out = []
        for v in range(self.n):
            for a in range(self.d):
                c = (v // step[a]) % self.L
                u = v - c * step[a] + ((c + 1) % self.L) * step[a]
                out.append((v, u))
        return out

    def _check(self, v):
        if not 0 <= v < self.n:
            raise IndexError(f"vertex {v} out of range for n={self.n}")


def _neighbor_table(L: int, d: int) -> np.ndarray:
    n = L**d
    idx = np.arange(n, dtype=np.int64)
    cols = []
    for a in range(d):
        step = L**a
        c = (idx // step) % L
        cols.append(idx + (((c + 1) % L) - c) * step)
        cols.append(idx + (((c - 1) % L) - c) * step)
    table = np.stack(cols, axis=1)
    table.sort(axis=1)
    return table


def build_torus(L: int, d: int) -> TorusLattice:
    if int(L) != L or int(d) != d:
        raise ConfigError("L and d must be integers")
    if L < 3:
        raise ConfigError(f"L must be >= 3 (got {L}); L = 2 creates parallel edges")
    if d < 1:
        raise ConfigError(f"d must be >= 1 (got {d})")
    if L**d > MAX_VERTICES:
        raise ConfigError(f"L^d = {L}^{d} overflows the vertex index type")
    return TorusLattice(int(L), int(d))


def neighbors(lat: TorusLattice, v: int) -> list[int]:
    return lat.neighbors(v)


def graph_distance(lat: TorusLattice, u: int, v: int) -> int:
    return lat.distance(u, v)
