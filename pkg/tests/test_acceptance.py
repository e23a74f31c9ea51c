"""Acceptance criteria 1-12. Each test prints one PASS/FAIL line."""
import time
from fractions import Fraction

import numpy as np
import pytest

from kcip_lab.chains import bl_spec, kcip_spec, mh_wrap, perfect_spec, uniform_on
from kcip_lab.cli import main
from kcip_lab.configspace import enumerate_kcip_space, enumerate_omega_k, enumerate_omega_upto
from kcip_lab.estimators import (TraceStream, coalescent_occupancy_profile, drift_estimate,
                                 fit_occupancy_constant, geometric_grid, kcip_bits_stepper,
                                 sample_independent_start, simulate_kcip, visit_frequencies)
from kcip_lab.flows import bl_flows_for_comparison
from kcip_lab.lattice import build_torus
from kcip_lab.rng import replica_rng
from kcip_lab.spectral import (birth_death_hitting_time, build_kernel_matrix,
                               comparison_constant, detailed_balance_defect, dirichlet_form,
                               hitting_times_solve, madras_randall_check, projected_kernel,
                               spectral_gap, stationary_distribution, trace_kernel_exact)

GOLDEN_1D_GAPS = {3: 0.15982746524346325, 4: 0.06533095649887855, 5: 0.028006636747531788}


@pytest.fixture
def report(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\nCRITERION {n}: {'PASS' if ok else 'FAIL'} {detail}")
        assert ok, detail
    return emit


@pytest.fixture(scope="module")
def lam32():
    return build_torus(3, 2)


def kcip_kernel(lat, p, exact=False):
    return build_kernel_matrix(kcip_spec(p), enumerate_kcip_space(lat), exact=exact)


def test_c1_exact_stationarity(report, lam32):
    t0 = time.perf_counter()
    errs = []
    for c in (0.5, 1.0, 2.0):
        K = kcip_kernel(lam32, c / 9)
        assert len(K) == 511
        pi = stationary_distribution(K, method="eig")
        errs.append(float(np.max(np.abs(pi - K.pi))))
    wall = time.perf_counter() - t0
    report(1, max(errs) <= 1e-10 and wall < 10, f"max errors {errs}, {wall:.2f}s")


def test_c2_detailed_balance_exact(report):
    defects = {}
    for L, d in ((3, 1), (3, 2)):
        lat = build_torus(L, d)
        K = kcip_kernel(lat, Fraction(1, lat.n), exact=True)
        defects[(L, d)] = detailed_balance_defect(K)
    report(2, all(v == 0 for v in defects.values()), f"defects {defects}")


def test_c3_lone_particle_safety(report):
    lat = build_torus(10, 2)
    t0 = time.perf_counter()
    worst = lat.n
    for s in range(100):
        x = sample_independent_start(lat, 1, replica_rng(s, 0, 0))
        st = simulate_kcip(lat, 1 / lat.n, x, 10**6 + 1, replica_rng(s, 0, 1),
                           checkpoints=[10**6 + 1], track_collisions=False)
        worst = min(worst, st.min_V)
    wall = time.perf_counter() - t0
    report(3, worst >= 1 and wall < 60, f"min V over runs {worst}, {wall:.1f}s")


def test_c4_trace(report, lam32):
    p = 1 / 9
    K = kcip_kernel(lam32, p)
    sub = enumerate_omega_upto(lam32, 2)
    idx = [K.space.index[b] for b in sub.states]
    T = trace_kernel_exact(K, idx)
    pi_t = stationary_distribution(T, method="eig")
    cond = K.pi[np.array(sorted(idx))]
    cond = cond / cond.sum()
    exact_err = float(np.max(np.abs(pi_t - cond)))

    pos = {b: i for i, b in enumerate(T.space.states)}
    stream = TraceStream(kcip_bits_stepper(lam32, p, np.random.default_rng(2024)),
                         pos.__contains__, T.space.states[0], 10**6)
    visits = [pos[b] for b in stream]
    freq, se = visit_frequencies(visits, len(T))
    z = float(np.max(np.abs(freq - cond) / se))
    report(4, exact_err <= 1e-10 and z <= 3,
           f"exact error {exact_err:.2e}, worst deviation {z:.2f} SE over {len(T)} states")


def test_c5_projected_chain(report, lam32):
    counts = [len(enumerate_omega_k(lam32, i)) for i in (1, 2, 3)]
    P = projected_kernel(counts, Fraction(1), 9)
    rows = max(abs(float(s) - 1) for s in P.P.sum(axis=1))
    Pf = P.as_float()
    up = abs(birth_death_hitting_time(Pf, 0, 1) - hitting_times_solve(Pf, 1)[0])
    down = abs(birth_death_hitting_time(Pf, 1, 0) - hitting_times_solve(Pf, 0)[1])
    ok = counts[1] == 18 and P.P[0, 1] == Fraction(1, 15) and rows <= 1e-12 and max(up, down) <= 1e-12
    report(5, ok, f"counts {counts}, P(1,2) = {P.P[0, 1]}, hitting gaps {up:.1e} {down:.1e}")


def test_c6_madras_randall(report, lam32):
    sub = enumerate_omega_upto(lam32, 3)
    margins = {}
    for c in (0.5, 1.0, 2.0):
        K = kcip_kernel(lam32, c / 9)
        T = trace_kernel_exact(K, [K.space.index[b] for b in sub.states])
        margins[c] = madras_randall_check(T, 3).margin
    report(6, all(m > 0 for m in margins.values()), f"margins {margins}")


def test_c7_perfect_gap(report, lam32):
    om = enumerate_omega_k(lam32, 2)
    gap = spectral_gap(build_kernel_matrix(perfect_spec(), om))
    report(7, abs(gap - 0.5) <= 1e-12, f"gap {gap!r} on {len(om)} states")


def test_c8_dirichlet_comparison(report, lam32):
    om = enumerate_omega_k(lam32, 2)
    K = build_kernel_matrix(perfect_spec(), om)
    Q = build_kernel_matrix(mh_wrap(bl_spec(), uniform_on(om.states)), om)
    flows, fallback = bl_flows_for_comparison(lam32, om)
    A = comparison_constant(K, Q, flows)
    rng = np.random.default_rng(8)
    violations = 0
    for _ in range(1000):
        f = rng.normal(size=len(om))
        if dirichlet_form(f, K) > A * dirichlet_form(f, Q) * (1 + 1e-12):
            violations += 1
    report(8, violations == 0,
           f"A = {A:.4f}, {violations} violations, {fallback}/{len(flows)} pairs via fallback flow")


def test_c9_coalescent_occupancy(report):
    lat = build_torus(32, 2)
    n = lat.n
    t0 = time.perf_counter()
    grid = sorted(set(geometric_grid(10 * n, 1.2)) | {n, 10 * n})
    prof = coalescent_occupancy_profile(lat, 64, 1 / 64, 10 * n, 200, seed=9, checkpoints=grid)
    fit = fit_occupancy_constant(prof)
    wall = time.perf_counter() - t0
    report(9, fit.ratio <= 3 and wall < 300,
           f"window constants {[round(c, 3) for c in fit.window_constants]}, "
           f"ratio {fit.ratio:.3f}, {wall:.1f}s")


def test_c10_drift(report):
    lat = build_torus(10, 2)
    t0 = time.perf_counter()
    hi = drift_estimate(lat, 1.0, 0.1, 40, 200, seed=10)
    lo = drift_estimate(lat, 1.0, 0.1, 10, 200, seed=10)
    wall = time.perf_counter() - t0
    ok = hi.mean < 40 and hi.mean >= lo.mean and wall < 600
    report(10, ok, f"E[V|40] = {hi.mean:.3f} +/- {hi.half_width:.3f}, "
                   f"E[V|10] = {lo.mean:.3f} +/- {lo.half_width:.3f}, {wall:.1f}s")


def test_c11_scaling(report):
    gaps = {}
    for L in (3, 4, 5):
        lat = build_torus(L, 1)
        gaps[L] = spectral_gap(kcip_kernel(lat, 1 / L))
    decreasing = gaps[3] > gaps[4] > gaps[5]
    golden = all(abs(gaps[L] - GOLDEN_1D_GAPS[L]) <= 1e-10 for L in gaps)
    report(11, decreasing and golden, f"gaps {gaps}")


RUNS = [
    ["simulate", "--L", "6", "--c", "1", "--horizon", "3000", "--replicas", "2", "--k", "2"],
    ["exact", "--L", "3", "--c", "1", "--format", "csv"],
    ["trace", "--L", "3", "--c", "1", "--k", "2", "--horizon", "20000"],
    ["project", "--L", "3", "--c", "1", "--k", "3"],
    ["decompose", "--L", "3", "--c", "1", "--format", "csv"],
    ["drift", "--L", "5", "--c", "1", "--k", "1,3", "--replicas", "4", "--epsilon", "0.05"],
    ["coalesce", "--L", "8", "--k", "8", "--replicas", "3"],
    ["mix", "--L", "3", "--c", "1", "--horizon", "50"],
    ["flows", "--L", "20", "--k", "2", "--replicas", "5"],
]


def test_c12_reproducibility(report, tmp_path):
    same = {}
    for args in RUNS:
        bodies = []
        for rep in range(2):
            out = tmp_path / f"{args[0]}_{rep}.csv"
            assert main(args + ["--seed", "12", "--out", str(out)]) == 0
            bodies.append(out.read_bytes())
        same[args[0]] = bodies[0] == bodies[1] and len(bodies[0]) > 0
    report(12, all(same.values()), f"identical bodies: {same}")
