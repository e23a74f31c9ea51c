"""Enumerated state spaces and the independence/spacing predicates."""
from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from itertools import combinations

from .chains import Configuration, bits_to_vertices
from .errors import ConfigError, StateCapError
from .lattice import TorusLattice

DEFAULT_MAX_KCIP_VERTICES = 20
DEFAULT_MAX_EXACT_STATES = 4096


def max_exact_states() -> int:
    """State cap for dense eigen work; ``KCIP_LAB_MAX_STATES`` overrides."""
    env = os.environ.get("KCIP_LAB_MAX_STATES")
    return int(env) if env else DEFAULT_MAX_EXACT_STATES


@dataclass(frozen=True)
class StateEnumeration:
    lattice: TorusLattice
    tag: str
    states: tuple
    index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "index", {b: i for i, b in enumerate(self.states)})
        if len(self.index) != len(self.states):
            raise ValueError("duplicate states in enumeration")

    def __len__(self):
        return len(self.states)

    def __iter__(self):
        return iter(self.states)

    def __contains__(self, bits):
        return bits in self.index

    def config(self, i: int) -> Configuration:
        return Configuration(self.lattice, self.states[i])

    def lookup(self, x) -> int:
        bits = x.bits if isinstance(x, Configuration) else x
        try:
            return self.index[bits]
        except KeyError:
            raise KeyError(f"state {bits:#x} is not in the {self.tag} space") from None

    def counts(self):
        """Particle count of every state, in enumeration order."""
        return [b.bit_count() for b in self.states]


def is_independent_bits(lat: TorusLattice, bits: int) -> bool:
    masks = lat.neighbor_masks
    b = bits
    while b:
        low = b & -b
        if bits & masks[low.bit_length() - 1]:
            return False
        b ^= low
    return True


def is_independent_config(x: Configuration) -> bool:
    return is_independent_bits(x.lattice, x.bits)


def min_pairwise_distance(x: Configuration) -> float:
    occ = x.occupied()
    if len(occ) < 2:
        return math.inf
    lat = x.lattice
    return min(lat.distance(a, b) for a, b in combinations(occ, 2))


def default_spacing_threshold(n: int) -> float:
    """sqrt(n) / log(n)^0.25, the "very well-spaced" cut-off."""
    return math.sqrt(n) / math.log(n) ** 0.25


def is_well_spaced(x: Configuration, threshold: float | None = None) -> bool:
    """All pairwise particle distances strictly exceed ``threshold``."""
    if threshold is None:
        threshold = default_spacing_threshold(x.lattice.n)
    return min_pairwise_distance(x) > threshold


def _independent_sets(lat: TorusLattice, k: int, allowed: int | None = None):
    """Size-k independent sets inside ``allowed`` (all sites if None), as bit
    masks, in lexicographic order of their sorted vertex tuples."""
    n = lat.n
    masks = lat.neighbor_masks
    if allowed is None:
        allowed = (1 << n) - 1
    out = []

    def dfs(start, chosen_bits, blocked, left):
        if left == 0:
            out.append(chosen_bits)
            return
        for v in range(start, n - left + 1):
            if (allowed >> v) & 1 and not (blocked >> v) & 1:
                dfs(v + 1, chosen_bits | (1 << v), blocked | masks[v] | (1 << v), left - 1)

    dfs(0, 0, 0, k)
    return out


def enumerate_omega_k(lat: TorusLattice, k: int) -> StateEnumeration:
    if not 1 <= k <= lat.n:
        raise ConfigError(f"k must satisfy 1 <= k <= n, got k={k}, n={lat.n}")
    return StateEnumeration(lat, f"omega_{k}", tuple(_independent_sets(lat, k)))


def enumerate_omega_upto(lat: TorusLattice, k: int) -> StateEnumeration:
    """Union of Omega_1..Omega_k, grouped by particle count."""
    states = []
    for i in range(1, k + 1):
        states.extend(enumerate_omega_k(lat, i).states)
    return StateEnumeration(lat, f"omega_le_{k}", tuple(states))


def enumerate_se_space(lat: TorusLattice, k: int) -> StateEnumeration:
    """All configurations with exactly k particles."""
    if not 0 <= k <= lat.n:
        raise ConfigError(f"k out of range: {k}")
    if math.comb(lat.n, k) > 2**DEFAULT_MAX_KCIP_VERTICES:
        raise StateCapError(f"C({lat.n},{k}) states exceeds the enumeration cap")
    states = tuple(sum(1 << v for v in c) for c in combinations(range(lat.n), k))
    return StateEnumeration(lat, f"se_{k}", states)


def enumerate_kcip_space(lat: TorusLattice, cap: int = DEFAULT_MAX_KCIP_VERTICES) -> StateEnumeration:
    """All 2^n - 1 non-empty configurations, ordered by their bit mask."""
    if lat.n > cap:
        raise StateCapError(f"n={lat.n} exceeds the KCIP enumeration cap of {cap} vertices")
    return StateEnumeration(lat, "kcip", tuple(range(1, 1 << lat.n)))


def stratum_of(lat: TorusLattice, bits: int) -> int:
    """Particle count if the configuration is independent, else 0."""
    if bits and is_independent_bits(lat, bits):
        return bits.bit_count()
    return 0


def stratum_sizes(lat: TorusLattice, kmax: int) -> list[int]:
    """[|Omega_1|, ..., |Omega_kmax|]."""
    return [len(_independent_sets(lat, i)) for i in range(1, kmax + 1)]


__all__ = [
    "StateEnumeration", "bits_to_vertices", "default_spacing_threshold",
    "enumerate_kcip_space", "enumerate_omega_k", "enumerate_omega_upto",
    "enumerate_se_space", "is_independent_bits", "is_independent_config",
    "is_well_spaced", "max_exact_states", "min_pairwise_distance",
    "stratum_of", "stratum_sizes",
]
