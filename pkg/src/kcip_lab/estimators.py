"""Monte Carlo and exact-evolution diagnostics.

Time convention: trajectories are one-based, with ``X_1`` the start state.
A record at time ``t`` therefore describes the state after ``t - 1`` steps.
The exception is :func:`tv_mixing_curve_exact`, whose ``t`` counts steps.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from statistics import NormalDist
from typing import Callable, Iterable, Iterator

import numpy as np

from . import _kernels as kr
from .chains import Configuration, ParticleSystem, coalescent_step, count_components, kcip_step, se_step
from .configspace import is_independent_bits
from .errors import ConfigError, InvalidRateError
from .lattice import TorusLattice
from .rng import BlockStream, coalescent_draws, kcip_draws, replica_rng, se_draws
from .spectral import KernelMatrix, _float_pi

Z95 = NormalDist().inv_cdf(0.975)


def geometric_grid(horizon: int, gamma: float = 1.5, start: int = 1) -> list[int]:
    """Times ceil(gamma^j) in [start, horizon], always including both ends."""
    if horizon < start:
        raise ConfigError(f"horizon {horizon} < {start}")
    if gamma <= 1:
        raise ConfigError("gamma must exceed 1")
    out = {start, horizon}
    j = 0
    while True:
        t = math.ceil(gamma**j)
        if t > horizon:
            break
        if t >= start:
            out.add(t)
        j += 1
    return sorted(out)


def occupation_kmax(n: int, r: float) -> int:
    return math.floor(r * math.log(n))


# ----------------------------------------------------------------------
# KCIP trajectories


@dataclass
class TrajectoryStats:
    """Per-checkpoint records of one KCIP run.

    ``occupation[i]`` is N(r, t_i): the number of states among X_1..X_{t_i}
    that are independent with between 1 and floor(r log n) particles.
    """
    t: np.ndarray
    V: np.ndarray
    components: np.ndarray
    in_strata: np.ndarray
    collisions: np.ndarray
    occupation: np.ndarray
    min_V: int
    r: float | None = None

    COLUMNS = ("t", "V", "components", "in_strata", "collisions", "occupation")

    def rows(self):
        for i in range(len(self.t)):
            yield tuple(int(getattr(self, c)[i]) for c in self.COLUMNS)

    def check(self):
        if np.any(np.diff(self.collisions) < 0):
            raise AssertionError("collision count decreased")
        if np.any(self.occupation > self.t):
            raise AssertionError("occupation count exceeds elapsed time")
        if self.min_V < 1:
            raise AssertionError("particle count hit zero")


def _start_array(x: Configuration) -> np.ndarray:
    if x.particle_count == 0:
        raise ConfigError("KCIP start must be non-empty")
    return x.to_array().astype(np.uint8)


def simulate_kcip(lat: TorusLattice, p: float, start: Configuration, horizon: int, rng,
                  checkpoints: Iterable[int] | None = None, r: float | None = None,
                  track_collisions: bool = True, block: int = 1 << 16) -> TrajectoryStats:
    """Run X_1 = start, ..., X_horizon and record counters at checkpoints."""
    if horizon < 1:
        raise ConfigError("horizon must be >= 1")
    cps = sorted(set(checkpoints)) if checkpoints is not None else geometric_grid(horizon)
    if cps[0] < 1 or cps[-1] > horizon:
        raise ConfigError("checkpoints must lie in [1, horizon]")
    kmax = occupation_kmax(lat.n, r) if r is not None else 0
    state = _start_array(start)
    nbrs = lat.neighbor_table
    ctr = np.zeros(6, dtype=np.int64)
    ctr[kr.V] = state.sum()
    ctr[kr.ADJ] = kr.adjacent_pairs(state, nbrs)
    ctr[kr.MIN_V] = ctr[kr.V]
    if ctr[kr.ADJ] == 0 and 1 <= ctr[kr.V] <= kmax:
        ctr[kr.OCC] = 1
    stamp = np.zeros(lat.n, dtype=np.int64)
    queue = np.empty(lat.n, dtype=np.int64)
    draws = BlockStream(rng, kcip_draws(lat.n), block)
    recs = []
    t = 1
    for cp in cps:
        while t < cp:
            m = min(cp - t, block)
            vs, us = draws.take(m)
            kr.kcip_run(state, nbrs, float(p), vs, us, ctr, kmax, track_collisions, stamp, queue)
            t += m
        recs.append((t, ctr[kr.V], kr.count_components(state, nbrs), int(ctr[kr.ADJ] == 0),
                     ctr[kr.COLL], ctr[kr.OCC]))
    arr = np.array(recs, dtype=np.int64)
    return TrajectoryStats(*arr.T, min_V=int(ctr[kr.MIN_V]), r=r)


def kcip_trajectory(lat: TorusLattice, p, start: Configuration, horizon: int, rng,
                    block: int = 1 << 16) -> list[Configuration]:
    """Pure-Python X_1..X_horizon using the same draw stream as :func:`simulate_kcip`."""
    out = [start]
    it = iter(BlockStream(rng, kcip_draws(lat.n), block))
    x = start
    for _ in range(horizon - 1):
        v, u = next(it)
        x = kcip_step(x, p, v=v, u=u)
        out.append(x)
    return out


def collision_count(trajectory) -> int:
    """Steps at which the occupied subgraph loses a connected component."""
    total = 0
    prev = None
    for x in trajectory:
        cc = count_components(x.lattice, x.bits)
        if prev is not None and cc < prev:
            total += 1
        prev = cc
    return total


def stats_from_trajectory(trajectory, checkpoints=None, r=None) -> TrajectoryStats:
    """Reference statistics computed state by state; mirrors :func:`simulate_kcip`."""
    lat = trajectory[0].lattice
    T = len(trajectory)
    cps = set(checkpoints) if checkpoints is not None else set(geometric_grid(T))
    kmax = occupation_kmax(lat.n, r) if r is not None else 0
    recs = []
    coll = occ = 0
    prev = None
    min_v = trajectory[0].particle_count
    for t, x in enumerate(trajectory, start=1):
        cc = count_components(lat, x.bits)
        if prev is not None and cc < prev:
            coll += 1
        prev = cc
        indep = is_independent_bits(lat, x.bits)
        if indep and 1 <= x.particle_count <= kmax:
            occ += 1
        min_v = min(min_v, x.particle_count)
        if t in cps:
            recs.append((t, x.particle_count, cc, int(indep), coll, occ))
    arr = np.array(recs, dtype=np.int64)
    return TrajectoryStats(*arr.T, min_V=min_v, r=r)


@dataclass(frozen=True)
class OccupationResult:
    count: int
    horizon: int
    kmax: int
    first_exceed: int | None


def occupation_count(trajectory, r: float, threshold: int | None = None) -> OccupationResult:
    """N(r, T) over X_1..X_T, plus the first T with N(r, T) > threshold."""
    trajectory = list(trajectory)
    if not trajectory:
        return OccupationResult(0, 0, 0, None)
    lat = trajectory[0].lattice
    kmax = occupation_kmax(lat.n, r)
    count = 0
    first = None
    for t, x in enumerate(trajectory, start=1):
        if 1 <= x.particle_count <= kmax and is_independent_bits(lat, x.bits):
            count += 1
        if threshold is not None and first is None and count > threshold:
            first = t
    return OccupationResult(count, len(trajectory), kmax, first)


# ----------------------------------------------------------------------
# exact TV curves


def tv_mixing_curve_exact(K: KernelMatrix, start: int, horizon: int) -> list[tuple[int, float]]:
    """(t, ||delta_start P^t - pi||_TV) for t = 0..horizon."""
    if horizon <= 0:
        raise ConfigError("horizon must be positive")
    Kf = K.as_float()
    pi = _float_pi(Kf)
    mu = np.zeros(len(Kf))
    mu[start] = 1.0
    out = [(0, 0.5 * float(np.abs(mu - pi).sum()))]
    P = Kf.P
    for t in range(1, horizon + 1):
        mu = mu @ P
        out.append((t, 0.5 * float(np.abs(mu - pi).sum())))
    return out


def mixing_time(curve, eps: float = 0.25) -> int | None:
    """First t > 0 on the curve with TV <= eps, or None if never reached."""
    for t, tv in curve:
        if t > 0 and tv <= eps:
            return t
    return None


# ----------------------------------------------------------------------
# drift of V_t


def sample_independent_start(lat: TorusLattice, k: int, rng, tries: int = 2000,
                             sweeps: int = 500) -> Configuration:
    """A k-particle configuration without adjacent pairs.

    Rejection sampling (exactly uniform on Omega_k) is tried first. If every
    attempt fails, a dense independent seed set is thinned to k sites and
    randomised by ``sweeps * k`` Metropolis moves with uniform target.
    """
    n = lat.n
    if not 1 <= k <= n:
        raise ConfigError(f"k={k} out of range")
    masks = lat.neighbor_masks
    for _ in range(tries):
        sites = rng.choice(n, size=k, replace=False)
        bits = 0
        for s in sites.tolist():
            bits |= 1 << s
        if is_independent_bits(lat, bits):
            return Configuration(lat, bits)
    base = _parity_independent_set(lat)
    if len(base) < k:
        raise ConfigError(f"no independent seed set with {k} sites on this lattice")
    chosen = rng.choice(np.array(base), size=k, replace=False).tolist()
    bits = sum(1 << s for s in chosen)
    occ = list(chosen)
    m = sweeps * k
    picks = rng.integers(0, k, m).tolist()
    targets = rng.integers(0, n, m).tolist()
    for i, s in zip(picks, targets):
        rest = bits & ~(1 << occ[i])
        if (rest >> s) & 1 or rest & masks[s]:
            continue
        bits = rest | (1 << s)
        occ[i] = s
    return Configuration(lat, bits)


def _parity_independent_set(lat: TorusLattice) -> list[int]:
    """Even-parity sites, dropping any that clash across the wrap when L is odd."""
    chosen = 0
    out = []
    for v in range(lat.n):
        if sum(lat.coords(v)) % 2 == 0 and not chosen & lat.neighbor_masks[v]:
            chosen |= 1 << v
            out.append(v)
    return out


@dataclass(frozen=True)
class DriftEstimate:
    v1: int
    horizon: int
    mean: float
    half_width: float
    values: tuple
    min_v: int

    def row(self):
        return (self.v1, self.horizon, self.mean, self.half_width)


def mean_half_width(values) -> tuple[float, float]:
    a = np.asarray(values, dtype=float)
    if len(a) < 2:
        raise ConfigError("need at least 2 replicas for an error bar")
    return float(a.mean()), float(Z95 * a.std(ddof=1) / math.sqrt(len(a)))


def drift_estimate(lat: TorusLattice, c: float, epsilon: float, start_count: int,
                   replicas: int, seed: int) -> DriftEstimate:
    """Replica mean of V_T with T = ceil(epsilon n^3), from starts in Omega_{V_1}.

    Replica ``r`` draws its start from substream 0 and its dynamics from
    substream 1, so runs with different ``start_count`` share dynamics draws.
    """
    if epsilon <= 0:
        raise ConfigError("epsilon must be positive")
    if replicas < 2:
        raise ConfigError("need at least 2 replicas for an error bar")
    n = lat.n
    p = c / n
    T = math.ceil(epsilon * n**3)
    vals = []
    min_v = start_count
    for r in range(replicas):
        x = sample_independent_start(lat, start_count, replica_rng(seed, r, 0))
        st = simulate_kcip(lat, p, x, T, replica_rng(seed, r, 1), checkpoints=[T],
                           track_collisions=False)
        vals.append(int(st.V[-1]))
        min_v = min(min_v, st.min_V)
    mean, hw = mean_half_width(vals)
    return DriftEstimate(start_count, T, mean, hw, tuple(vals), min_v)


def fit_drift(estimates) -> tuple[float, float]:
    """Least-squares (alpha, intercept) in mean = (1 - alpha) V_1 + intercept."""
    v1 = np.array([e.v1 for e in estimates], dtype=float)
    m = np.array([e.mean for e in estimates], dtype=float)
    if len(set(v1)) < 2:
        raise ConfigError("need at least two distinct V_1 values")
    slope, icpt = np.polyfit(v1, m, 1)
    return float(1 - slope), float(icpt)


# ----------------------------------------------------------------------
# coalescent occupancy


def _coalescent_setup(lat, positions, q):
    positions = np.asarray(positions, dtype=np.int64)
    k = len(positions)
    if not 0 <= q <= 1 / k:
        raise InvalidRateError(f"q={q} exceeds 1/k={1 / k}")
    occ = np.empty(lat.n, dtype=np.int64)
    sites = np.unique(positions)
    occ[:len(sites)] = sites
    return positions.copy(), occ, len(sites)


def simulate_coalescent(lat: TorusLattice, positions, q: float, horizon: int, rng,
                        checkpoints=None, block: int = 1 << 16) -> tuple[list[int], list[int]]:
    """Occupied-site counts L_t at checkpoints, with L_1 from ``positions``."""
    pos, occ, nocc = _coalescent_setup(lat, positions, q)
    cps = sorted(set(checkpoints)) if checkpoints is not None else geometric_grid(horizon)
    draws = BlockStream(rng, coalescent_draws(lat.degree), block)
    nbrs = lat.neighbor_table
    t = 1
    out = []
    for cp in cps:
        while t < cp:
            m = min(cp - t, block)
            us, picks, dirs = draws.take(m)
            nocc = kr.coalescent_run(pos, occ, nocc, nbrs, float(q), us, picks, dirs)
            t += m
        out.append(int(nocc))
    return cps, out


def coalescent_reference(lat: TorusLattice, positions, q: float, horizon: int, rng,
                         block: int = 1 << 16) -> list[ParticleSystem]:
    """Pure-Python ParticleSystem states at times 1..horizon on the same draws."""
    ps = ParticleSystem(lat, tuple(int(v) for v in positions), q)
    it = iter(BlockStream(rng, coalescent_draws(lat.degree), block))
    out = [ps]
    for _ in range(horizon - 1):
        u, pick, direction = next(it)
        nocc = len(ps.occupied_sites)
        site = min(int(pick * nocc), nocc - 1)
        ps = coalescent_step(ps, u=u, site=site, direction=direction)
        out.append(ps)
    return out


@dataclass(frozen=True)
class OccupancyProfile:
    n: int
    times: tuple
    mean_L: tuple
    per_replica: np.ndarray = field(repr=False, compare=False)

    def rows(self):
        return list(zip(self.times, self.mean_L))


def coalescent_occupancy_profile(lat: TorusLattice, k_initial: int, q: float, horizon: int,
                                 replicas: int, seed: int, checkpoints=None) -> OccupancyProfile:
    """Replica-averaged L_t; walkers start at distinct uniformly chosen sites."""
    if not 1 <= k_initial <= lat.n:
        raise ConfigError("k_initial must lie in [1, n]")
    if not 0 <= q <= 1 / k_initial:
        raise InvalidRateError(f"q={q} exceeds 1/k={1 / k_initial}")
    if replicas < 1:
        raise ConfigError("replicas must be >= 1")
    cps = sorted(set(checkpoints)) if checkpoints is not None else geometric_grid(horizon)
    table = []
    for r in range(replicas):
        start = replica_rng(seed, r, 0).choice(lat.n, size=k_initial, replace=False)
        _, counts = simulate_coalescent(lat, start, q, horizon, replica_rng(seed, r, 1), cps)
        table.append(counts)
    arr = np.array(table, dtype=np.int64)
    return OccupancyProfile(lat.n, tuple(cps), tuple(arr.mean(axis=0).tolist()), arr)


@dataclass(frozen=True)
class OccupancyFit:
    times: tuple
    constants: tuple
    window_constants: tuple
    ratio: float


def fit_occupancy_constant(profile: OccupancyProfile, lo: int | None = None,
                           hi: int | None = None, windows: int = 4) -> OccupancyFit:
    """C(t) = E[L_t] (t - 1) / (n log t) on [lo, hi] (default [n, 10n]).

    The range is cut into ``windows`` geometric windows; each window's fitted
    constant is the largest C(t) inside it, i.e. the smallest C for which the
    bound holds there.
    """
    n = profile.n
    lo = n if lo is None else lo
    hi = 10 * n if hi is None else hi
    pts = [(t, m) for t, m in zip(profile.times, profile.mean_L) if lo <= t <= hi]
    if len(pts) < windows:
        raise ConfigError("not enough checkpoints inside the fitting range")
    ts = np.array([t for t, _ in pts], dtype=float)
    cs = np.array([m * (t - 1) / (n * math.log(t)) for t, m in pts])
    edges = np.geomspace(lo, hi, windows + 1)
    win = []
    for a, b in zip(edges, edges[1:]):
        sel = (ts >= a) & (ts <= b)
        if not sel.any():
            raise ConfigError(f"no checkpoint in window [{a:.0f}, {b:.0f}]")
        win.append(float(cs[sel].max()))
    return OccupancyFit(tuple(int(t) for t in ts), tuple(cs.tolist()), tuple(win),
                        max(win) / min(win))


# ----------------------------------------------------------------------
# collision times under simple exclusion


@dataclass(frozen=True)
class CensoredTimes:
    """Hitting times with ``-1`` marking runs censored at ``horizon``."""
    times: tuple
    horizon: int

    @property
    def censored(self) -> tuple:
        return tuple(t < 0 for t in self.times)

    def quantile(self, q: float) -> float:
        """Empirical quantile with censored runs treated as +inf."""
        a = np.sort(np.array([math.inf if t < 0 else t for t in self.times], dtype=float))
        idx = min(len(a) - 1, max(0, math.ceil(q * len(a)) - 1))
        return float(a[idx])

    def rows(self):
        return [(i, t if t >= 0 else self.horizon, int(t < 0)) for i, t in enumerate(self.times)]


def collision_time_simulation(lat: TorusLattice, start: Configuration, replicas: int, seed: int,
                              horizon: int | None = None, block: int = 1 << 14) -> CensoredTimes:
    """SE steps until two particles first become adjacent, per replica."""
    if not is_independent_bits(lat, start.bits):
        raise ConfigError("start configuration has an adjacent pair")
    if horizon is None:
        horizon = 10 * lat.n**2
    k = start.particle_count
    if k < 2:
        return CensoredTimes(tuple([-1] * replicas), horizon)
    nbrs = lat.neighbor_table
    ends = np.array(lat.edges(), dtype=np.int64)
    out = []
    for r in range(replicas):
        state = _start_array(start)
        draws = BlockStream(replica_rng(seed, r, 1), se_draws(lat.num_edges), block)
        used, adj, hit = 0, 0, -1
        while used < horizon:
            (edges,) = draws.take(min(block, horizon - used))
            s, adj = kr.se_collision_run(state, nbrs, ends, edges, adj)
            used += s
            if adj > 0:
                hit = used
                break
        out.append(hit)
    return CensoredTimes(tuple(out), horizon)


def collision_time_reference(start: Configuration, horizon: int, rng, block: int = 1 << 14) -> int:
    """Pure-Python single replica of :func:`collision_time_simulation`."""
    lat = start.lattice
    it = iter(BlockStream(rng, se_draws(lat.num_edges), block))
    z = start
    for s in range(1, horizon + 1):
        (e,) = next(it)
        z = se_step(z, edge=e)
        if not is_independent_bits(lat, z.bits):
            return s
    return -1


# ----------------------------------------------------------------------
# trace streams


class TraceStream:
    """Lazily yield Z_{eta(1)}, Z_{eta(2)}, ... for the chain driven by ``step``.

    ``step(state) -> state`` advances the underlying chain; Z_1 = ``start``.
    ``kappa`` counts predicate hits among Z_1..Z_T with T = ``elapsed``.
    Iteration stops with ``censored = True`` once ``horizon`` states have
    been examined without a further hit.
    """

    def __init__(self, step: Callable, predicate: Callable, start, horizon: int):
        if horizon < 1:
            raise ConfigError("horizon must be >= 1")
        self.step = step
        self.predicate = predicate
        self.horizon = horizon
        self.state = start
        self.elapsed = 0
        self.kappa = 0
        self.eta: list[int] = []
        self.censored = False
        self._started = False

    def __iter__(self) -> Iterator:
        return self

    def __next__(self):
        while self.elapsed < self.horizon:
            if self._started:
                self.state = self.step(self.state)
            self._started = True
            self.elapsed += 1
            if self.predicate(self.state):
                self.kappa += 1
                self.eta.append(self.elapsed)
                return self.state
        self.censored = True
        raise StopIteration


def kcip_bits_stepper(lat: TorusLattice, p: float, rng, block: int = 1 << 16) -> Callable:
    """Fast KCIP step on raw bit masks, drawing from a :class:`BlockStream`."""
    masks = lat.neighbor_masks
    draws = BlockStream(rng, kcip_draws(lat.n), block)
    buf = {"v": [], "u": [], "i": 0}

    def step(bits: int) -> int:
        if buf["i"] == len(buf["v"]):
            vs, us = draws.take(block)
            buf["v"], buf["u"], buf["i"] = vs.tolist(), us.tolist(), 0
        i = buf["i"]
        buf["i"] = i + 1
        v = buf["v"][i]
        if not bits & masks[v]:
            return bits
        return bits | (1 << v) if buf["u"][i] <= p else bits & ~(1 << v)

    return step


def visit_frequencies(indices, m: int, batches: int = 100) -> tuple[np.ndarray, np.ndarray]:
    """Empirical frequencies of category indices 0..m-1 and batch-means
    standard errors (which account for autocorrelation along the stream)."""
    idx = np.asarray(indices, dtype=np.int64)
    size = len(idx) // batches
    if size == 0:
        raise ConfigError("fewer samples than batches")
    per = np.stack([np.bincount(idx[b * size:(b + 1) * size], minlength=m) / size
                    for b in range(batches)])
    freq = np.bincount(idx, minlength=m) / len(idx)
    return freq, per.std(axis=0, ddof=1) / math.sqrt(batches)
