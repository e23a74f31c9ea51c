"""Coverings, open-vertex orderings and random Bernoulli-Laplace flows.

Everything here works on plain vertex indices of a :class:`TorusLattice`;
configurations are passed as :class:`Configuration` or as bit masks.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from itertools import permutations

from .chains import Configuration, bits_to_vertices
from .configspace import StateEnumeration, _independent_sets, is_independent_bits
from .errors import ConfigError, EmptyIntermediateSetError, NoOpenSequenceError
from .lattice import TorusLattice


def _cyc(a: int, b: int, L: int) -> int:
    d = abs(a - b) % L
    return min(d, L - d)


def linf_distance(lat: TorusLattice, u: int, v: int) -> int:
    return max(_cyc(a, b, lat.L) for a, b in zip(lat.coords(u), lat.coords(v)))


# ----------------------------------------------------------------------
# coverings


@dataclass(frozen=True)
class Covering:
    lattice: TorusLattice
    m: int
    sets: tuple            # frozensets of vertices
    centres: tuple         # particles whose squares make up each set

    @property
    def union(self) -> frozenset:
        return frozenset().union(*self.sets)

    def check(self, points) -> None:
        """Raise AssertionError unless the covering invariants hold for ``points``."""
        lat = self.lattice
        seen = set()
        for s in self.sets:
            if seen & s:
                raise AssertionError("covering sets overlap")
            seen |= s
        pts = list(points)
        for s, cs in zip(self.sets, self.centres):
            if not 1 <= len(cs) <= len(pts):
                raise AssertionError("set built from too many squares")
            if set(cs) - set(pts) or not s & set(pts):
                raise AssertionError("set contains no particle")
            if s != frozenset().union(*(square(lat, c, self.m) for c in cs)):
                raise AssertionError("set is not a union of its squares")
        for u in range(lat.n):
            if any(lat.distance(u, v) <= 2 for v in pts) and u not in seen:
                raise AssertionError(f"vertex {u} near a particle is uncovered")


def square(lat: TorusLattice, centre: int, m: int) -> frozenset:
    """Side-m box {u : ||u - centre||_inf <= (m-1)/2}."""
    h = (m - 1) // 2
    c = lat.coords(centre)
    out = set()
    for dx in range(-h, h + 1):
        for dy in range(-h, h + 1):
            out.add(lat.index(((c[0] + dx) % lat.L, (c[1] + dy) % lat.L)))
    return frozenset(out)


def small_covering(x, m: int, extra=()) -> Covering:
    """Merged-squares covering of the particles of ``x`` plus ``extra`` points.

    Squares whose vertex sets intersect are merged transitively.
    """
    lat = x.lattice
    if lat.d != 2:
        raise ConfigError("coverings are defined on two-dimensional tori only")
    if m < 5 or m % 2 == 0:
        raise ConfigError(f"m must be odd and >= 5, got {m}")
    if lat.L <= 2 * m:
        raise ConfigError(f"need L > 2m, got L={lat.L}, m={m}")
    pts = list(dict.fromkeys(list(x.occupied()) + [int(e) for e in extra]))
    if not pts:
        raise ConfigError("nothing to cover")
    boxes = {p: square(lat, p, m) for p in pts}
    parent = {p: p for p in pts}

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for i, a in enumerate(pts):
        for b in pts[i + 1:]:
            if boxes[a] & boxes[b]:
                parent[find(a)] = find(b)
    groups = {}
    for p in pts:
        groups.setdefault(find(p), []).append(p)
    sets, centres = [], []
    for members in sorted(groups.values()):
        sets.append(frozenset().union(*(boxes[p] for p in members)))
        centres.append(tuple(members))
    return Covering(lat, m, tuple(sets), tuple(centres))


# ----------------------------------------------------------------------
# open vertices


@dataclass(frozen=True)
class OpenSequence:
    order: tuple           # particle vertices in removal order
    paths: tuple           # escape path for each of order[:-1]


def _escape_ok(lat, path, blockers, cover) -> bool:
    if path[-1] in cover:
        return False
    for a, b in zip(path, path[1:]):
        if lat.distance(a, b) != 1:
            return False
    return all(lat.distance(y, z) > 1 for y in path for z in blockers)


def _ray(lat, start, sign, blockers, cover):
    """Straight walk along axis 0 until it leaves the covering, or None."""
    c = list(lat.coords(start))
    path = [start]
    for _ in range(lat.L):
        if path[-1] not in cover:
            return path if _escape_ok(lat, path, blockers, cover) else None
        c[0] = (c[0] + sign) % lat.L
        path.append(lat.index(c))
    return None


def _bfs_escape(lat, start, blockers, cover):
    """Shortest path from ``start`` to a vertex outside ``cover`` that keeps
    distance > 1 from every blocker, or None."""
    bad = set(blockers)
    for z in blockers:
        bad.update(lat.neighbors(z))
    if start in bad:
        return None
    prev = {start: None}
    queue = deque([start])
    while queue:
        u = queue.popleft()
        if u not in cover:
            path = []
            while u is not None:
                path.append(u)
                u = prev[u]
            return path[::-1]
        for w in lat.neighbors(u):
            if w not in prev and w not in bad:
                prev[w] = u
                queue.append(w)
    return None


def find_escape(lat, vertex, blockers, cover):
    """Escape path: extremal rays first, breadth-first search as backup."""
    for sign in (1, -1):
        path = _ray(lat, vertex, sign, blockers, cover)
        if path is not None:
            return path
    return _bfs_escape(lat, vertex, blockers, cover)


def open_vertex_sequence(x, privileged: int, cover: Covering) -> OpenSequence:
    """Order the particles so each of the first k-1 is open when removed.

    At each stage the particles with extremal first coordinate are tried
    before the rest. Every returned path is re-verified against the
    openness conditions. Raises :class:`NoOpenSequenceError` when no
    remaining particle is open.
    """
    lat = x.lattice
    cov = cover.union
    remaining = list(x.occupied())
    order, paths = [], []
    while len(remaining) > 1:
        firsts = [lat.coords(v)[0] for v in remaining]
        hi = remaining[firsts.index(max(firsts))]
        lo = remaining[firsts.index(min(firsts))]
        candidates = list(dict.fromkeys([hi, lo] + remaining))
        chosen = None
        for v in candidates:
            blockers = [w for w in remaining if w != v] + [privileged]
            sign_first = 1 if v == hi else -1
            path = _ray(lat, v, sign_first, blockers, cov) if v in (hi, lo) else None
            if path is None:
                path = find_escape(lat, v, blockers, cov)
            if path is not None:
                if not _escape_ok(lat, path, blockers, cov) or path[0] != v:
                    raise AssertionError("escape path failed verification")
                chosen = (v, path)
                break
        if chosen is None:
            raise NoOpenSequenceError(
                f"no open particle among {sorted(remaining)} (privileged {privileged})")
        order.append(chosen[0])
        paths.append(tuple(chosen[1]))
        remaining.remove(chosen[0])
    order.extend(remaining)
    return OpenSequence(tuple(order), tuple(paths))


def torus_geodesic(lat: TorusLattice, u: int, v: int) -> list[int]:
    """Shortest path fixing coordinates in axis order 0, 1, ...

    A stand-in for canonical torus paths; ties in direction go forwards.
    """
    c = list(lat.coords(u))
    target = lat.coords(v)
    path = [u]
    for axis in range(lat.d):
        fwd = (target[axis] - c[axis]) % lat.L
        step = 1 if fwd <= lat.L - fwd else -1
        while c[axis] != target[axis]:
            c[axis] = (c[axis] + step) % lat.L
            path.append(lat.index(c))
    return path


# ----------------------------------------------------------------------
# Bernoulli-Laplace flows


@dataclass(frozen=True)
class FlowPath:
    """States (bit masks) from X through Z to Y; ``tries`` counts proposals."""
    states: tuple
    z: int
    tries: int = 1
    fallback: bool = False

    @property
    def length(self) -> int:
        return len(self.states) - 1


def _bits(vs) -> int:
    return sum(1 << v for v in vs)


def _as_bits(x) -> int:
    return x.bits if isinstance(x, Configuration) else int(x)


def closed_neighbourhood(lat: TorusLattice, bits: int) -> int:
    out = bits
    for v in bits_to_vertices(bits):
        out |= lat.neighbor_masks[v]
    return out


def flow_states(xs, zs, ys) -> tuple:
    """sigma_1..sigma_{k+1} then eta_2..eta_{k+1}, as bit masks.

    A state whose vertex list repeats a site is returned as -1.
    """
    k = len(xs)

    def state(a, b, i):
        vs = list(a[i:]) + list(b[:i])
        return _bits(vs) if len(set(vs)) == k else -1

    first = [state(xs, zs, i) for i in range(k + 1)]
    second = [state(zs, ys, i) for i in range(1, k + 1)]
    return tuple(first + second)


def intermediate_set(lat: TorusLattice, x, y) -> list[int]:
    """All Z in Omega_{n,k} with no particle in the closed neighbourhood of X or Y."""
    xb, yb = _as_bits(x), _as_bits(y)
    k = xb.bit_count()
    allowed = ((1 << lat.n) - 1) & ~closed_neighbourhood(lat, xb | yb)
    return _independent_sets(lat, k, allowed)


def _shuffled(rng, bits):
    vs = bits_to_vertices(bits)
    return [vs[i] for i in rng.permutation(len(vs))]


def bl_flow_sample(lat: TorusLattice, x, y, rng, mode: str = "rejection",
                   max_tries: int = 100_000) -> FlowPath:
    """Random path X -> Z -> Y of length 2k.

    ``mode="direct"`` enumerates the intermediate set and picks Z uniformly;
    ``mode="rejection"`` proposes uniform k-subsets until one lands in it.
    Both give the same law. Raises :class:`EmptyIntermediateSetError` if the
    intermediate set is empty.
    """
    xb, yb = _as_bits(x), _as_bits(y)
    k = xb.bit_count()
    if yb.bit_count() != k or k == 0:
        raise ConfigError("X and Y need the same positive particle count")
    for b in (xb, yb):
        if not is_independent_bits(lat, b):
            raise ConfigError("endpoints must be independent configurations")
    forbidden = closed_neighbourhood(lat, xb | yb)
    tries = 0
    if mode == "direct":
        cands = intermediate_set(lat, xb, yb)
        if not cands:
            raise EmptyIntermediateSetError("intermediate set is empty")
        z = cands[int(rng.integers(len(cands)))]
        tries = 1
    elif mode == "rejection":
        z = None
        while tries < max_tries:
            tries += 1
            zb = _bits(rng.choice(lat.n, size=k, replace=False).tolist())
            if not zb & forbidden and is_independent_bits(lat, zb):
                z = zb
                break
        if z is None:
            if not intermediate_set(lat, xb, yb):
                raise EmptyIntermediateSetError("intermediate set is empty")
            raise ConfigError(f"no acceptance within {max_tries} proposals")
    else:
        raise ConfigError(f"unknown mode {mode!r}")
    xs, ys, zs = _shuffled(rng, xb), _shuffled(rng, yb), _shuffled(rng, z)
    states = flow_states(xs, zs, ys)
    for s in states:
        if s < 0 or not is_independent_bits(lat, s):
            raise AssertionError("flow path left Omega_{n,k}")
    return FlowPath(states, z, tries)


def valid_tuples(lat: TorusLattice, x, y, omega: StateEnumeration):
    """(Z, path) over all Z in ``omega`` and all orderings whose whole path
    stays in ``omega``. Used when the intermediate set is empty."""
    xb, yb = _as_bits(x), _as_bits(y)
    out = []
    xv, yv = bits_to_vertices(xb), bits_to_vertices(yb)
    for z in omega:
        zv = bits_to_vertices(z)
        for xs in permutations(xv):
            for ys in permutations(yv):
                for zs in permutations(zv):
                    st = flow_states(xs, zs, ys)
                    if all(s in omega for s in st):
                        out.append((z, st))
    return out


def flow_distribution(lat: TorusLattice, x, y, omega: StateEnumeration,
                      allow_fallback: bool = True) -> tuple[list, bool]:
    """Exact path law for the pair (x, y), merged over identical paths.

    Returns ``(paths, fallback)`` where ``paths`` is a list of
    ``(state tuple, probability)``. With an empty intermediate set and
    ``allow_fallback``, (Z, orderings) is uniform over :func:`valid_tuples`.
    """
    xb, yb = _as_bits(x), _as_bits(y)
    cands = intermediate_set(lat, xb, yb)
    law = {}
    fallback = False
    if cands:
        xv, yv = bits_to_vertices(xb), bits_to_vertices(yb)
        k = len(xv)
        w = 1 / (len(cands) * math.factorial(k) ** 3)
        for z in cands:
            zv = bits_to_vertices(z)
            for xs in permutations(xv):
                for ys in permutations(yv):
                    for zs in permutations(zv):
                        st = flow_states(xs, zs, ys)
                        law[st] = law.get(st, 0.0) + w
    else:
        if not allow_fallback:
            raise EmptyIntermediateSetError("intermediate set is empty")
        tuples = valid_tuples(lat, xb, yb, omega)
        if not tuples:
            raise EmptyIntermediateSetError("no admissible path through Omega_{n,k}")
        fallback = True
        w = 1 / len(tuples)
        for _, st in tuples:
            law[st] = law.get(st, 0.0) + w
    return sorted(law.items()), fallback


def bl_flows_for_comparison(lat: TorusLattice, omega: StateEnumeration,
                            pairs=None) -> tuple[dict, int]:
    """Flows keyed by index pairs, ready for ``comparison_constant``.

    Returns ``(flows, fallback_pairs)``.
    """
    flows = {}
    n_fallback = 0
    if pairs is None:
        pairs = [(a, b) for a in range(len(omega)) for b in range(len(omega)) if a != b]
    for a, b in pairs:
        law, fb = flow_distribution(lat, omega.states[a], omega.states[b], omega)
        n_fallback += fb
        flows[(a, b)] = [(tuple(omega.index[s] for s in st), w) for st, w in law]
    return flows, n_fallback


def exact_rejection_probability(lat: TorusLattice, x, y) -> float:
    """P[a uniform k-subset misses the intermediate set], by exact counting (k = 2)."""
    xb, yb = _as_bits(x), _as_bits(y)
    if xb.bit_count() != 2:
        raise ConfigError("exact rejection probability is implemented for k = 2")
    good = ((1 << lat.n) - 1) & ~closed_neighbourhood(lat, xb | yb)
    pairs = 0
    for v in bits_to_vertices(good):
        pairs += (good & ~lat.neighbor_masks[v] & ~(1 << v)).bit_count()
    return 1 - (pairs // 2) / math.comb(lat.n, 2)
