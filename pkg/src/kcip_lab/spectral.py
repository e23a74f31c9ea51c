"""Exact dense analysis of small chains.

Kernels are dense row-stochastic matrices. Float kernels use numpy arrays;
``exact=True`` builds use object arrays of ``Fraction`` so detailed balance
can be checked with zero error.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
import scipy.linalg
from scipy.optimize import minimize
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .chains import KernelSpec, transition_row
from .configspace import StateEnumeration, max_exact_states, stratum_of
from .errors import ConfigError, NotReversibleError, ReducibleChainError, StateCapError

ROW_TOL = 1e-12
REV_TOL = 1e-12


@dataclass(frozen=True)
class KernelMatrix:
    P: np.ndarray
    pi: np.ndarray | None = None
    space: StateEnumeration | None = None
    name: str = ""
    reversible: bool = True
    labels: tuple | None = field(default=None, compare=False)

    @property
    def exact(self) -> bool:
        return self.P.dtype == object

    def __len__(self):
        return self.P.shape[0]

    def as_float(self) -> "KernelMatrix":
        if not self.exact:
            return self
        pi = None if self.pi is None else self.pi.astype(float)
        return KernelMatrix(self.P.astype(float), pi, self.space, self.name,
                            self.reversible, self.labels)

    def with_pi(self, pi) -> "KernelMatrix":
        return KernelMatrix(self.P, np.asarray(pi), self.space, self.name,
                            self.reversible, self.labels)


def _check_cap(size, cap):
    cap = max_exact_states() if cap is None else cap
    if size > cap:
        raise StateCapError(f"{size} states exceeds the exact-analysis cap of {cap}")


def build_kernel_matrix(spec: KernelSpec, space: StateEnumeration, exact=False,
                        cap: int | None = None) -> KernelMatrix:
    """Dense kernel of ``spec`` on ``space`` by marginalising each rule's draws."""
    N = len(space)
    _check_cap(N, cap)
    lat = space.lattice
    if exact:
        P = np.full((N, N), Fraction(0), dtype=object)
    else:
        P = np.zeros((N, N))
    for i, x in enumerate(space.states):
        for y, w in transition_row(spec, lat, x, exact, space.states).items():
            if not w:
                continue
            j = space.index.get(y)
            if j is None:
                raise ConfigError(f"{spec.name} leaves the {space.tag} space from state {x:#x}")
            P[i, j] += w
    pi = None
    if spec.rule == "kcip":
        p = Fraction(spec.params["p"]) if exact else spec.params["p"]
        n = lat.n
        Z = 1 - (1 - p) ** n
        pi = np.array([p**k * (1 - p) ** (n - k) / Z for k in space.counts()],
                      dtype=object if exact else float)
    elif spec.rule in ("se", "se_lazy", "bl", "perfect") or (
            spec.rule == "mh" and spec.target is not None):
        if spec.rule == "mh":
            w = [Fraction(spec.target(x)) if exact else float(spec.target(x)) for x in space.states]
            tot = sum(w)
            pi = np.array([v / tot for v in w], dtype=object if exact else float)
        else:
            pi = np.full(N, Fraction(1, N) if exact else 1.0 / N, dtype=object if exact else float)
    return KernelMatrix(P, pi, space, spec.name)


def row_sum_defect(K: KernelMatrix):
    sums = K.P.sum(axis=1)
    return max(abs(s - 1) for s in sums)


def detailed_balance_defect(K: KernelMatrix, pi=None):
    """max |pi(x)P(x,y) - pi(y)P(y,x)| over all pairs (a Fraction in exact mode)."""
    pi = K.pi if pi is None else pi
    P = K.P
    if not K.exact:
        F = pi[:, None] * P
        return float(np.max(np.abs(F - F.T)))
    worst = Fraction(0)
    rows, cols = np.nonzero(P != 0)
    for x, y in zip(rows.tolist(), cols.tolist()):
        d = abs(pi[x] * P[x, y] - pi[y] * P[y, x])
        if d > worst:
            worst = d
    return worst


def recurrent_classes(P: np.ndarray) -> int:
    """Number of closed communicating classes of the support graph."""
    A = csr_matrix(np.asarray(P != 0, dtype=float))
    ncomp, labels = connected_components(A, directed=True, connection="strong")
    closed = np.ones(ncomp, dtype=bool)
    rows, cols = A.nonzero()
    leaving = labels[rows] != labels[cols]
    closed[np.unique(labels[rows[leaving]])] = False
    return int(closed.sum())


def stationary_distribution(K: KernelMatrix, method: str = "solve") -> np.ndarray:
    """Unique stationary vector; ``method`` is ``solve`` or ``eig``."""
    P = K.as_float().P
    if recurrent_classes(P) != 1:
        raise ReducibleChainError("chain has more than one recurrent class")
    N = P.shape[0]
    if method == "eig":
        vals, vecs = scipy.linalg.eig(P.T)
        i = int(np.argmin(np.abs(vals - 1)))
        v = np.real(vecs[:, i])
        pi = v / v.sum()
    elif method == "solve":
        A = P.T - np.eye(N)
        A[-1, :] = 1.0
        b = np.zeros(N)
        b[-1] = 1.0
        pi = np.linalg.solve(A, b)
    else:
        raise ConfigError(f"unknown method {method!r}")
    return pi


def _float_pi(K):
    if K.pi is not None:
        return np.asarray(K.pi, dtype=float)
    return stationary_distribution(K)


def spectrum(K: KernelMatrix, pi=None) -> np.ndarray:
    """Eigenvalues of a reversible kernel, descending, via D^1/2 P D^-1/2."""
    Kf = K.as_float()
    pi = _float_pi(Kf) if pi is None else np.asarray(pi, dtype=float)
    if detailed_balance_defect(Kf, pi) > REV_TOL:
        raise NotReversibleError(f"kernel {K.name!r} is not reversible w.r.t. pi")
    s = np.sqrt(pi)
    S = s[:, None] * Kf.P / s[None, :]
    S = 0.5 * (S + S.T)
    return np.sort(np.linalg.eigvalsh(S))[::-1]


def spectral_gap(K: KernelMatrix, pi=None) -> float:
    """1 - beta_1 with beta_1 the second-largest eigenvalue."""
    ev = spectrum(K, pi)
    if len(ev) < 2:
        return 1.0
    return float(1.0 - ev[1])


def gap_eigenvector(K: KernelMatrix, pi=None) -> np.ndarray:
    """Right eigenvector for beta_1 (the variational minimiser of E/V)."""
    Kf = K.as_float()
    pi = _float_pi(Kf) if pi is None else pi
    s = np.sqrt(pi)
    S = s[:, None] * Kf.P / s[None, :]
    vals, vecs = np.linalg.eigh(0.5 * (S + S.T))
    order = np.argsort(vals)[::-1]
    return vecs[:, order[1]] / s


# ----------------------------------------------------------------------
# functionals


def l2_norm_sq(f, pi) -> float:
    f = np.asarray(f, dtype=float)
    return float(np.sum(f**2 * pi))


def variance(f, pi) -> float:
    f = np.asarray(f, dtype=float)
    diff = f[:, None] - f[None, :]
    return float(0.5 * np.sum(diff**2 * pi[:, None] * pi[None, :]))


def dirichlet_form(f, K: KernelMatrix, pi=None) -> float:
    Kf = K.as_float()
    pi = _float_pi(Kf) if pi is None else pi
    f = np.asarray(f, dtype=float)
    diff = f[:, None] - f[None, :]
    return float(0.5 * np.sum(diff**2 * Kf.P * pi[:, None]))


def entropy(f, pi) -> float:
    f = np.asarray(f, dtype=float)
    norm = l2_norm_sq(f, pi)
    if norm == 0:
        raise ConfigError("entropy of the zero function")
    f2 = f**2
    nz = f2 > 0
    return float(np.sum(f2[nz] * np.log(f2[nz] / norm) * pi[nz]))


@dataclass
class LogSobolevEstimate:
    """Smallest E/L found. An upper bound on the log-Sobolev constant."""

    value: float
    trials: int
    function: np.ndarray = field(repr=False)

    def __float__(self):
        return self.value


def log_sobolev_lower_estimate(K: KernelMatrix, trials: int = 20, seed: int = 0,
                               pi=None) -> LogSobolevEstimate:
    """Random-restart descent on E(f,f)/L(f).

    Every evaluated quotient is a valid upper bound on alpha(P), so the
    returned minimum approaches alpha from above. Not a certificate.
    """
    Kf = K.as_float()
    pi = _float_pi(Kf) if pi is None else np.asarray(pi, dtype=float)
    if detailed_balance_defect(Kf, pi) > REV_TOL:
        raise NotReversibleError("log-Sobolev estimate needs a reversible kernel")
    P = Kf.P
    N = len(pi)
    lap = pi[:, None] * (np.eye(N) - P)
    lap = 0.5 * (lap + lap.T)
    rng = np.random.default_rng(seed)

    def objective(f):
        norm = np.sum(f**2 * pi)
        f2 = f**2
        with np.errstate(divide="ignore", invalid="ignore"):
            logs = np.where(f2 > 0, np.log(f2 / norm), 0.0)
        L = np.sum(f2 * logs * pi)
        E = f @ lap @ f
        if L <= 1e-300:
            return np.inf, np.zeros_like(f)
        gE = 2 * lap @ f
        gL = 2 * pi * f * logs
        return E / L, (gE * L - E * gL) / L**2

    starts = []
    phi = gap_eigenvector(Kf, pi) if N > 1 else np.zeros(N)
    phi = phi / max(np.max(np.abs(phi)), 1e-300)
    for eps in (0.5, 0.1, 0.02):
        starts.append(1 + eps * phi)
    while len(starts) < trials:
        starts.append(rng.random(N) + 0.05)
    starts = starts[:max(trials, 1)]

    best, best_f = np.inf, None
    for f0 in starts:
        val0, _ = objective(f0)
        if val0 < best:
            best, best_f = float(val0), f0.copy()
        res = minimize(objective, f0, jac=True, method="L-BFGS-B",
                       options={"maxiter": 500})
        val, _ = objective(res.x)
        if np.isfinite(val) and val < best:
            best, best_f = float(val), res.x.copy()
    return LogSobolevEstimate(best, len(starts), best_f)


# ----------------------------------------------------------------------
# derived chains


def _subspace(K: KernelMatrix, idx, tag):
    if K.space is None:
        return None
    states = tuple(K.space.states[i] for i in idx)
    return StateEnumeration(K.space.lattice, tag, states)


def trace_kernel_exact(K: KernelMatrix, subset) -> KernelMatrix:
    """Kernel of the chain watched only on ``subset`` (state indices).

    Q_S = P_SS + P_SB (I - P_BB)^-1 P_BS with B the complement.
    """
    Kf = K.as_float()
    N = len(Kf)
    S = np.array(sorted(set(int(i) for i in subset)), dtype=int)
    if S.size == 0:
        raise ConfigError("trace onto an empty subset")
    mask = np.zeros(N, dtype=bool)
    mask[S] = True
    B = np.flatnonzero(~mask)
    P = Kf.P
    Q = P[np.ix_(S, S)].copy()
    if B.size:
        A = np.eye(B.size) - P[np.ix_(B, B)]
        try:
            X = np.linalg.solve(A, P[np.ix_(B, S)])
        except np.linalg.LinAlgError as e:
            raise ReducibleChainError("complement of the subset is not transient") from e
        if not np.all(np.isfinite(X)) or np.linalg.cond(A) > 1e14:
            raise ReducibleChainError("complement of the subset is not transient")
        Q += P[np.ix_(S, B)] @ X
    pi = None
    if Kf.pi is not None:
        pi = Kf.pi[S] / Kf.pi[S].sum()
    return KernelMatrix(Q, pi, _subspace(Kf, S, "trace"), f"trace({K.name})")


def strata(K: KernelMatrix) -> np.ndarray:
    """Independent-stratum index of every state (0 if not independent)."""
    lat = K.space.lattice
    return np.array([stratum_of(lat, b) for b in K.space.states])


def restriction_kernel(K: KernelMatrix, i: int) -> KernelMatrix:
    """P confined to Omega_i u Omega_{i+1}, rejected mass on the diagonal."""
    Kf = K.as_float()
    lab = strata(Kf)
    idx = np.flatnonzero((lab == i) | (lab == i + 1))
    if not np.any(lab == i) or not np.any(lab == i + 1):
        raise ConfigError(f"stratum {i} or {i + 1} is empty in this space")
    R = Kf.P[np.ix_(idx, idx)].copy()
    np.fill_diagonal(R, 0.0)
    np.fill_diagonal(R, 1.0 - R.sum(axis=1))
    pi = None
    if Kf.pi is not None:
        pi = Kf.pi[idx] / Kf.pi[idx].sum()
    return KernelMatrix(R, pi, _subspace(Kf, idx, f"omega_{i}_{i + 1}"), f"P_{i}")


def stratum_weights(counts, c, n) -> list:
    """|Omega_i| p^i (1-p)^(n-i) with p = c/n, exact when ``c`` is a Fraction."""
    p = c / n if isinstance(c, Fraction) else float(c) / n
    return [cnt * p**i * (1 - p) ** (n - i) for i, cnt in enumerate(counts, start=1)]


def projected_kernel_from_masses(masses) -> KernelMatrix:
    """Projected chain on {1..k-1} from stratum masses pi(Omega_1..Omega_k).

    P~(i,j) = pi(U_i n U_j) / (3 pi(U_i)) for i != j with U_i = Omega_i u Omega_{i+1}.
    """
    k = len(masses)
    if k < 2:
        raise ConfigError("need at least two strata")
    if any(m <= 0 for m in masses):
        raise ConfigError("stratum masses must be positive")
    exact = all(isinstance(m, (Fraction, int)) for m in masses)
    m = k - 1
    zero = Fraction(0) if exact else 0.0
    P = np.full((m, m), zero, dtype=object if exact else float)
    for a in range(1, k):
        union_a = {a, a + 1}
        denom = 3 * (masses[a - 1] + masses[a])
        for b in range(1, k):
            if b == a:
                continue
            overlap = union_a & {b, b + 1}
            if overlap:
                P[a - 1, b - 1] = sum(masses[s - 1] for s in overlap) / denom
        P[a - 1, a - 1] = 1 - sum(P[a - 1, b] for b in range(m) if b != a - 1)
    mu = [masses[a - 1] + masses[a] for a in range(1, k)]
    tot = sum(mu)
    pi = np.array([v / tot for v in mu], dtype=object if exact else float)
    return KernelMatrix(P, pi, None, "projected", labels=tuple(range(1, k)))


def projected_kernel(counts, c, n) -> KernelMatrix:
    """Projected chain from stratum sizes |Omega_1..Omega_k| at density c/n."""
    if any(cnt <= 0 for cnt in counts):
        raise ConfigError("stratum counts must be positive")
    return projected_kernel_from_masses(stratum_weights(counts, c, n))


def _is_tridiagonal(P) -> bool:
    N = P.shape[0]
    i, j = np.nonzero(np.asarray(P != 0))
    return bool(np.all(np.abs(i - j) <= 1)) if N else True


def birth_death_hitting_time(K: KernelMatrix, start: int, target: int) -> float:
    """Expected number of steps to first reach ``target`` from ``start``.

    Indices are matrix positions. Uses the birth-death sum
    sum_v 1/(mu(v) P(v,v+1)) * sum_{q<=v} mu(q) (mirrored for downward hits).
    """
    Kf = K.as_float()
    if not _is_tridiagonal(Kf.P):
        raise ConfigError("kernel is not birth-death (tridiagonal)")
    P = Kf.P
    mu = _float_pi(Kf)
    if start == target:
        return 0.0
    total = 0.0
    if start < target:
        for v in range(start, target):
            total += mu[: v + 1].sum() / (mu[v] * P[v, v + 1])
    else:
        for v in range(target + 1, start + 1):
            total += mu[v:].sum() / (mu[v] * P[v, v - 1])
    return float(total)


def hitting_times_solve(K: KernelMatrix, target: int) -> np.ndarray:
    """Expected steps to hit ``target`` from every state, by linear solve."""
    P = K.as_float().P
    N = P.shape[0]
    others = np.array([i for i in range(N) if i != target], dtype=int)
    A = np.eye(others.size) - P[np.ix_(others, others)]
    h = np.zeros(N)
    h[others] = np.linalg.solve(A, np.ones(others.size))
    return h


# ----------------------------------------------------------------------
# comparison of Dirichlet forms


def _clean_path(path):
    out = [path[0]]
    for s in path[1:]:
        if s != out[-1]:
            out.append(s)
    return tuple(out)


def extend_function(f, n_hat: int, embed, extension=None) -> np.ndarray:
    """Linear extension f^(x) = sum_y P_x[y] f(y) onto the larger space."""
    f = np.asarray(f, dtype=float)
    out = np.zeros(n_hat)
    inside = np.zeros(n_hat, dtype=bool)
    out[embed] = f
    inside[embed] = True
    for x in np.flatnonzero(~inside):
        law = (extension or {}).get(int(x))
        if law is None:
            raise ConfigError(f"no extension law for outside state {x}")
        out[x] = sum(w * f[b] for b, w in law.items())
    return out


def comparison_constant(K: KernelMatrix, Q: KernelMatrix, flows, embed=None,
                        extension=None, couplings=None, tol=1e-9) -> float:
    """Constant A with E_K(f^, f^) <= A * E_Q(f, f) for linear extensions.

    ``flows`` maps ordered pairs (a, b) of Q-state indices to a list of
    ``(path, weight)`` with paths given as Q-state index sequences.
    ``embed[a]`` is the K-index of Q-state ``a`` (identity by default).
    ``extension[x]`` is the law P_x (dict b -> prob) for K-states outside
    the embedded set; ``couplings[(x, y)]`` is a joint law on pairs (a, b),
    defaulting to the product coupling.
    """
    Kf, Qf = K.as_float(), Q.as_float()
    mu, nu = _float_pi(Kf), _float_pi(Qf)
    n_hat, n = len(Kf), len(Qf)
    embed = np.arange(n) if embed is None else np.asarray(embed, dtype=int)
    extension = extension or {}
    couplings = couplings or {}
    inside = np.zeros(n_hat, dtype=bool)
    inside[embed] = True
    outside = np.flatnonzero(~inside)

    demand = {}

    def add(a, b, w):
        if a != b and w:
            demand[(a, b)] = demand.get((a, b), 0.0) + w

    Pk = Kf.P
    for a in range(n):
        for b in range(n):
            add(a, b, Pk[embed[a], embed[b]] * mu[embed[a]])
    for a in range(n):
        xa = embed[a]
        for y in outside:
            kxy = Pk[xa, y]
            if kxy:
                for b, w in extension[int(y)].items():
                    add(a, b, 2 * w * kxy * mu[xa])
    for x in outside:
        for y in outside:
            kxy = Pk[x, y]
            if not kxy:
                continue
            joint = couplings.get((int(x), int(y)))
            if joint is None:
                joint = {(a, b): wa * wb for a, wa in extension[int(x)].items()
                         for b, wb in extension[int(y)].items()}
            for (a, b), w in joint.items():
                add(a, b, w * kxy * mu[x])

    Pq = Qf.P
    load = {}
    for (a, b), dem in demand.items():
        paths = flows.get((a, b))
        if not paths:
            raise ConfigError(f"no flow supplied for pair {(a, b)}")
        total = sum(w for _, w in paths)
        if abs(total - 1) > tol:
            raise ConfigError(f"flow weights for {(a, b)} sum to {total}")
        for path, w in paths:
            path = _clean_path(path)
            if path[0] != a or path[-1] != b:
                raise ConfigError(f"path endpoints do not match pair {(a, b)}")
            steps = len(path) - 1
            for q, r in zip(path, path[1:]):
                if Pq[q, r] <= 0:
                    raise ConfigError(f"path uses zero-probability edge {(q, r)}")
                load[(q, r)] = load.get((q, r), 0.0) + w * steps * dem
    if not load:
        return 0.0
    return max(v / (Pq[q, r] * nu[q]) for (q, r), v in load.items())


def variance_comparison_constant(nu, mu_on_theta) -> float:
    """sup_y nu(y)/mu(y): scales V and L from the big space to the small one."""
    nu = np.asarray(nu, dtype=float)
    mu = np.asarray(mu_on_theta, dtype=float)
    return float(np.max(nu / mu))


def direct_edge_flows(Q: KernelMatrix):
    """Each pair routed along its own Q-edge (only pairs with Q(a,b) > 0)."""
    P = Q.as_float().P
    rows, cols = np.nonzero(P > 0)
    return {(int(a), int(b)): [((int(a), int(b)), 1.0)] for a, b in zip(rows, cols) if a != b}


# ----------------------------------------------------------------------
# decomposition bound


@dataclass
class MadrasRandallReport:
    k: int
    gap: float
    projected_gap: float
    restriction_gaps: list
    bound: float
    margin: float
    holds: bool

    def to_dict(self):
        return {"k": self.k, "gap": self.gap, "projected_gap": self.projected_gap,
                "restriction_gaps": list(self.restriction_gaps), "bound": self.bound,
                "margin": self.margin, "holds": self.holds}


def madras_randall_check(P: KernelMatrix, k: int) -> MadrasRandallReport:
    """Evaluate gap(P) >= (1/9) gap(P~) min_i gap(P_i) for strata 1..k of P."""
    Pf = P.as_float()
    pi = _float_pi(Pf)
    Pf = Pf.with_pi(pi)
    lab = strata(Pf)
    masses = [float(pi[lab == i].sum()) for i in range(1, k + 1)]
    gap = spectral_gap(Pf)
    proj = projected_kernel_from_masses(masses)
    pgap = spectral_gap(proj)
    rgaps = [spectral_gap(restriction_kernel(Pf, i)) for i in range(1, k)]
    bound = pgap * min(rgaps) / 9.0
    return MadrasRandallReport(k, gap, pgap, rgaps, bound, gap - bound, gap >= bound)


def kernel_report(K: KernelMatrix, params: dict) -> dict:
    """JSON-ready summary: id, parameters, size, gap and stationary checksum."""
    Kf = K.as_float()
    pi = _float_pi(Kf)
    return {
        "kernel": K.name,
        "params": dict(params),
        "states": len(Kf),
        "row_sum_defect": float(row_sum_defect(Kf)),
        "detailed_balance_defect": float(detailed_balance_defect(Kf, pi)),
        "gap": spectral_gap(Kf, pi),
        "stationary_checksum": float(np.dot(np.arange(1, len(pi) + 1), pi)),
    }


__all__ = [
    "KernelMatrix", "LogSobolevEstimate", "MadrasRandallReport",
    "birth_death_hitting_time", "build_kernel_matrix", "comparison_constant",
    "detailed_balance_defect", "direct_edge_flows", "dirichlet_form", "entropy",
    "extend_function", "hitting_times_solve", "kernel_report", "l2_norm_sq",
    "log_sobolev_lower_estimate", "madras_randall_check", "projected_kernel",
    "projected_kernel_from_masses", "restriction_kernel", "row_sum_defect",
    "spectral_gap", "spectrum", "stationary_distribution", "stratum_weights",
    "trace_kernel_exact", "variance", "variance_comparison_constant",
]
