"""Single-step transition rules.

Every step function takes its randomness either as forced draws (keyword
arguments, used by tests and by the block-draw simulators) or from a
``numpy.random.Generator``. Exact one-step distributions for the same rules
live in :func:`transition_row`; they work with floats or with
``fractions.Fraction`` parameters.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Mapping

import numpy as np

from .errors import ConfigError, InvalidRateError
from .lattice import TorusLattice


@dataclass(frozen=True)
class Configuration:
    """Occupancy of a torus packed into a Python int (bit v = site v)."""

    lattice: TorusLattice
    bits: int
    particle_count: int = field(init=False)

    def __post_init__(self):
        if self.bits < 0 or self.bits >> self.lattice.n:
            raise ConfigError("occupancy bits exceed lattice size")
        object.__setattr__(self, "particle_count", self.bits.bit_count())

    @classmethod
    def from_vertices(cls, lattice, vertices) -> "Configuration":
        bits = 0
        for v in vertices:
            lattice._check(int(v))
            bits |= 1 << int(v)
        return cls(lattice, bits)

    @classmethod
    def from_array(cls, lattice, arr) -> "Configuration":
        return cls.from_vertices(lattice, np.flatnonzero(np.asarray(arr)))

    def occupied(self) -> list[int]:
        return bits_to_vertices(self.bits)

    def to_array(self) -> np.ndarray:
        out = np.zeros(self.lattice.n, dtype=np.uint8)
        out[self.occupied()] = 1
        return out

    def __getitem__(self, v: int) -> int:
        return (self.bits >> v) & 1

    def __len__(self):
        return self.lattice.n


def bits_to_vertices(bits: int) -> list[int]:
    out = []
    while bits:
        low = bits & -bits
        out.append(low.bit_length() - 1)
        bits ^= low
    return out


def has_occupied_neighbor(lat: TorusLattice, bits: int, v: int) -> bool:
    return bool(bits & lat.neighbor_masks[v])


# ----------------------------------------------------------------------
# KCIP (FA1f)


def kcip_step(x: Configuration, p, rng=None, *, v=None, u=None) -> Configuration:
    """One KCIP update: resample site ``v`` iff it has an occupied neighbour.

    ``v`` is the uniformly chosen site and ``u`` the uniform threshold draw;
    the site becomes occupied when ``u <= p`` and empty otherwise.
    """
    lat = x.lattice
    if v is None:
        v = int(rng.integers(lat.n))
    if u is None:
        u = float(rng.random())
    if not has_occupied_neighbor(lat, x.bits, v):
        return x
    if u <= p:
        return Configuration(lat, x.bits | (1 << v))
    return Configuration(lat, x.bits & ~(1 << v))


def kcip_stationary_weight(x: Configuration, p) -> float:
    """pi(x) = p^|x| (1-p)^(n-|x|) / (1 - (1-p)^n); exact if ``p`` is a Fraction."""
    k = x.particle_count
    if k == 0:
        raise ConfigError("the empty configuration has zero stationary weight")
    n = x.lattice.n
    return p**k * (1 - p) ** (n - k) / (1 - (1 - p) ** n)


# ----------------------------------------------------------------------
# exclusion-type chains


def se_step(z: Configuration, rng=None, *, edge=None) -> Configuration:
    """Swap the labels across a uniformly chosen edge (edge numbering of
    :meth:`TorusLattice.edges`)."""
    lat = z.lattice
    if edge is None:
        edge = int(rng.integers(lat.num_edges))
    a, b = _edge_endpoints(lat, edge)
    return Configuration(lat, _swap(z.bits, a, b))


def bl_step(z: Configuration, rng=None, *, hold=None, i=None, j=None) -> Configuration:
    """Lazy Bernoulli-Laplace step.

    ``hold`` is the lazy coin; otherwise the ``i``-th occupied site (in
    increasing order) moves to the ``j``-th empty site.
    """
    lat = z.lattice
    k = z.particle_count
    if k == 0 or k == lat.n:
        raise ConfigError("Bernoulli-Laplace needs 1 <= k <= n-1")
    if hold is None:
        hold = bool(rng.random() < 0.5)
    if hold:
        return z
    occ = z.occupied()
    empty = bits_to_vertices(((1 << lat.n) - 1) & ~z.bits)
    if i is None:
        i = int(rng.integers(k))
    if j is None:
        j = int(rng.integers(lat.n - k))
    return Configuration(lat, (z.bits & ~(1 << occ[i])) | (1 << empty[j]))


def _edge_endpoints(lat: TorusLattice, edge: int) -> tuple[int, int]:
    v, axis = divmod(int(edge), lat.d)
    step = lat.L**axis
    c = (v // step) % lat.L
    return v, v + (((c + 1) % lat.L) - c) * step


def _swap(bits: int, a: int, b: int) -> int:
    if ((bits >> a) & 1) != ((bits >> b) & 1):
        bits ^= (1 << a) | (1 << b)
    return bits


# ----------------------------------------------------------------------
# coalescent process


@dataclass(frozen=True)
class ParticleSystem:
    lattice: TorusLattice
    positions: tuple
    q: float

    def __post_init__(self):
        k = len(self.positions)
        if k == 0:
            raise ConfigError("coalescent needs at least one walker")
        if not 0 <= self.q <= 1 / k:
            raise InvalidRateError(f"moving rate q={self.q} outside [0, 1/k] for k={k}")

    @classmethod
    def start(cls, lattice, positions, q=None) -> "ParticleSystem":
        positions = tuple(int(v) for v in positions)
        return cls(lattice, positions, 1 / len(positions) if q is None else q)

    @property
    def k(self) -> int:
        return len(self.positions)

    @property
    def occupied_sites(self) -> list[int]:
        return sorted(set(self.positions))


def coalescent_step(ps: ParticleSystem, rng=None, *, u=None, site=None,
                    direction=None) -> ParticleSystem:
    """Move the whole stack at one occupied site with probability q|O|.

    ``site`` indexes the sorted occupied sites and ``direction`` the sorted
    neighbour list of that site.
    """
    occ = ps.occupied_sites
    if ps.q * len(occ) > 1:
        raise InvalidRateError("q * |O| > 1")
    if u is None:
        u = float(rng.random())
    if site is None:
        site = int(rng.integers(len(occ)))
    if direction is None:
        direction = int(rng.integers(ps.lattice.degree))
    if u > ps.q * len(occ):
        return ps
    src = occ[site]
    dst = int(ps.lattice.neighbor_table[src, direction])
    moved = tuple(dst if z == src else z for z in ps.positions)
    return ParticleSystem(ps.lattice, moved, ps.q)


# ----------------------------------------------------------------------
# connectivity


def connected_components(x: Configuration) -> int:
    """Number of connected components of the occupied subgraph."""
    if x.particle_count == 0:
        raise ConfigError("connected components of an empty configuration")
    return count_components(x.lattice, x.bits)


def count_components(lat: TorusLattice, bits: int) -> int:
    remaining = bits
    comps = 0
    while remaining:
        start = (remaining & -remaining).bit_length() - 1
        remaining &= ~(1 << start)
        comps += 1
        queue = deque([start])
        while queue:
            v = queue.popleft()
            nb = lat.neighbor_masks[v] & remaining
            remaining &= ~nb
            queue.extend(bits_to_vertices(nb))
    return comps


# ----------------------------------------------------------------------
# kernel specifications and exact rows


@dataclass(frozen=True)
class KernelSpec:
    """A named transition rule over a named state space.

    ``rule`` is one of ``kcip``, ``se``, ``se_lazy``, ``bl``, ``perfect`` or
    ``mh``. ``params`` carries ``p`` for KCIP. ``mh`` specs carry the
    proposal spec and a target weight function on occupancy bits.
    """

    rule: str
    space: str
    params: Mapping = field(default_factory=dict)
    proposal: "KernelSpec | None" = None
    target: Callable | None = field(default=None, compare=False)

    @property
    def name(self) -> str:
        if self.rule == "mh":
            return f"mh({self.proposal.name})"
        return self.rule


RULES = ("kcip", "se", "se_lazy", "bl", "perfect", "mh")


def kcip_spec(p) -> KernelSpec:
    if not 0 < p < 1:
        raise ConfigError(f"p must lie in (0, 1), got {p}")
    return KernelSpec("kcip", "kcip", {"p": p})


def se_spec(lazy=False) -> KernelSpec:
    return KernelSpec("se_lazy" if lazy else "se", "se")


def bl_spec() -> KernelSpec:
    return KernelSpec("bl", "se")


def perfect_spec() -> KernelSpec:
    return KernelSpec("perfect", "omega")


def uniform_on(states) -> Callable:
    members = frozenset(states)
    return lambda bits: 1 if bits in members else 0


def mh_wrap(proposal: KernelSpec, target, space: str = "omega") -> KernelSpec:
    """Metropolis-Hastings chain with the given symmetric proposal.

    ``target`` is a weight function on occupancy bits or a mapping from bits
    to weight; states with zero weight are never entered.
    """
    if isinstance(target, Mapping):
        table = dict(target)
        target_fn = lambda bits: table.get(bits, 0)  # noqa: E731
    elif callable(target):
        target_fn = target
    else:
        raise ConfigError("target must be a callable or a mapping")
    return KernelSpec("mh", space, proposal=proposal, target=target_fn)


def transition_row(spec: KernelSpec, lat: TorusLattice, bits: int, exact=False,
                   states=None) -> dict:
    """Exact one-step law from ``bits`` as ``{next_bits: probability}``.

    With ``exact=True`` all probabilities are Fractions (``p`` must then be
    a Fraction or int-ratio-convertible value).
    """
    one = Fraction(1) if exact else 1.0
    rule = spec.rule
    if rule == "kcip":
        return _kcip_row(lat, bits, Fraction(spec.params["p"]) if exact else spec.params["p"], one)
    if rule in ("se", "se_lazy"):
        row = _se_row(lat, bits, one)
        if rule == "se_lazy":
            row = {y: w / 2 for y, w in row.items()}
            row[bits] = row.get(bits, 0) + one / 2
        return row
    if rule == "bl":
        return _bl_row(lat, bits, one)
    if rule == "perfect":
        if states is None:
            raise ConfigError("the perfect kernel needs the enumerated state space")
        w = one / (2 * len(states))
        row = {y: w for y in states}
        row[bits] = row.get(bits, 0) + one / 2
        return row
    if rule == "mh":
        return _mh_row(spec, lat, bits, exact, one, states)
    raise ConfigError(f"unknown rule {rule!r}")


def _kcip_row(lat, bits, p, one):
    n = lat.n
    row = {}
    for v in range(n):
        if not bits & lat.neighbor_masks[v]:
            row[bits] = row.get(bits, 0) + one / n
            continue
        up = bits | (1 << v)
        down = bits & ~(1 << v)
        row[up] = row.get(up, 0) + p / n
        row[down] = row.get(down, 0) + (one - p) / n
    return row


def _se_row(lat, bits, one):
    m = lat.num_edges
    row = {}
    for a, b in lat.edges():
        y = _swap(bits, a, b)
        row[y] = row.get(y, 0) + one / m
    return row


def _bl_row(lat, bits, one):
    occ = bits_to_vertices(bits)
    empty = bits_to_vertices(((1 << lat.n) - 1) & ~bits)
    k = len(occ)
    if k == 0 or not empty:
        raise ConfigError("Bernoulli-Laplace needs 1 <= k <= n-1")
    w = one / (2 * k * len(empty))
    row = {bits: one / 2}
    for a in occ:
        for b in empty:
            y = (bits & ~(1 << a)) | (1 << b)
            row[y] = row.get(y, 0) + w
    return row


def _mh_row(spec, lat, bits, exact, one, states=None):
    t = spec.target
    tx = t(bits)
    if not tx:
        raise ConfigError("MH target vanishes at the current state")
    proposal = transition_row(spec.proposal, lat, bits, exact, states)
    row = {}
    stay = one
    for y, w in proposal.items():
        if y == bits or not w:
            continue
        ty = t(y)
        if not ty:
            continue
        ratio = Fraction(ty) / Fraction(tx) if exact else ty / tx
        acc = w * min(one, ratio)
        row[y] = acc
        stay -= acc
    row[bits] = stay
    return row
