from fractions import Fraction

import numpy as np
import pytest

from kcip_lab.chains import bl_spec, kcip_spec, mh_wrap, perfect_spec, se_spec, uniform_on
from kcip_lab.configspace import enumerate_kcip_space, enumerate_omega_k, enumerate_se_space
from kcip_lab.errors import ConfigError, NotReversibleError, ReducibleChainError, StateCapError
from kcip_lab.lattice import build_torus
from kcip_lab.spectral import (KernelMatrix, birth_death_hitting_time, build_kernel_matrix,
                               comparison_constant, detailed_balance_defect, direct_edge_flows,
                               dirichlet_form, entropy, extend_function, gap_eigenvector,
                               hitting_times_solve, kernel_report, l2_norm_sq,
                               log_sobolev_lower_estimate, madras_randall_check,
                               projected_kernel, projected_kernel_from_masses,
                               restriction_kernel, row_sum_defect, spectral_gap, spectrum,
                               stationary_distribution, stratum_weights, trace_kernel_exact,
                               variance, variance_comparison_constant)


def two_state(a, b):
    P = np.array([[1 - a, a], [b, 1 - b]])
    return KernelMatrix(P, np.array([b, a]) / (a + b))


@pytest.fixture(scope="module")
def kcip32():
    lat = build_torus(3, 2)
    return build_kernel_matrix(kcip_spec(1 / 9), enumerate_kcip_space(lat))


def test_two_state_gap_and_hitting():
    K = two_state(0.3, 0.1)
    assert spectral_gap(K) == pytest.approx(0.4, abs=1e-14)
    assert birth_death_hitting_time(K, 0, 1) == pytest.approx(1 / 0.3, rel=1e-14)
    assert hitting_times_solve(K, 1)[0] == pytest.approx(1 / 0.3, rel=1e-14)


def test_stationary_methods_agree(kcip32):
    a = stationary_distribution(kcip32, "solve")
    b = stationary_distribution(kcip32, "eig")
    assert np.max(np.abs(a - kcip32.pi)) < 1e-12
    assert np.max(np.abs(b - kcip32.pi)) < 1e-10
    with pytest.raises(ConfigError):
        stationary_distribution(kcip32, "power")


def test_rows_and_balance(kcip32):
    assert row_sum_defect(kcip32) < 1e-14
    assert detailed_balance_defect(kcip32) < 1e-16


def test_exact_kernel_on_ring():
    lat = build_torus(3, 1)
    K = build_kernel_matrix(kcip_spec(Fraction(1, 3)), enumerate_kcip_space(lat), exact=True)
    assert K.exact and row_sum_defect(K) == 0 and detailed_balance_defect(K) == 0
    assert sum(K.pi) == 1


def test_reducible_detected():
    P = np.eye(3)
    with pytest.raises(ReducibleChainError):
        stationary_distribution(KernelMatrix(P))


def test_non_reversible_detected():
    # doubly stochastic with a rotational bias: uniform pi, no detailed balance
    K = KernelMatrix(np.array([[0.5, 0.4, 0.1], [0.1, 0.5, 0.4], [0.4, 0.1, 0.5]]))
    with pytest.raises(NotReversibleError):
        spectrum(K)


def test_cap():
    lat = build_torus(3, 2)
    with pytest.raises(StateCapError):
        build_kernel_matrix(kcip_spec(0.1), enumerate_kcip_space(lat), cap=100)


def test_perfect_gap_half():
    lat = build_torus(4, 2)
    om = enumerate_omega_k(lat, 2)
    K = build_kernel_matrix(perfect_spec(), om)
    ev = spectrum(K)
    assert ev[0] == pytest.approx(1) and np.allclose(ev[1:], 0.5, atol=1e-12)


def test_se_uniform_and_lazy_gap():
    lat = build_torus(3, 2)
    sp = enumerate_se_space(lat, 2)
    Kse = build_kernel_matrix(se_spec(), sp)
    Klazy = build_kernel_matrix(se_spec(lazy=True), sp)
    assert np.allclose(stationary_distribution(Kse), 1 / len(sp))
    ev = spectrum(Klazy)
    assert ev.min() >= -1e-12
    assert spectral_gap(Klazy) == pytest.approx(spectral_gap(Kse) / 2, rel=1e-10)


def test_bl_gap_closed_form():
    # lazy Bernoulli-Laplace on k-subsets of n: gap = n / (2 k (n - k))
    lat = build_torus(3, 2)
    K = build_kernel_matrix(bl_spec(), enumerate_se_space(lat, 2))
    assert spectral_gap(K) == pytest.approx(9 / (2 * 2 * 7), rel=1e-12)


def test_mh_kernel_uniform_on_omega():
    lat = build_torus(3, 2)
    om = enumerate_omega_k(lat, 2)
    K = build_kernel_matrix(mh_wrap(se_spec(lazy=True), uniform_on(om.states)), om)
    assert row_sum_defect(K) < 1e-14
    assert np.allclose(stationary_distribution(K), 1 / 18)


def test_functionals_on_constants(kcip32):
    pi = kcip32.pi
    f = np.full(len(pi), 3.0)
    assert l2_norm_sq(f, pi) == pytest.approx(9)
    assert variance(f, pi) == pytest.approx(0, abs=1e-14)
    assert dirichlet_form(f, kcip32) == pytest.approx(0, abs=1e-14)
    assert entropy(f, pi) == pytest.approx(0, abs=1e-12)


def test_gap_is_rayleigh_minimum(kcip32):
    phi = gap_eigenvector(kcip32)
    pi = kcip32.pi
    assert dirichlet_form(phi, kcip32) / variance(phi, pi) == pytest.approx(
        spectral_gap(kcip32), rel=1e-8)
    rng = np.random.default_rng(0)
    g = spectral_gap(kcip32)
    for _ in range(20):
        f = rng.normal(size=len(pi))
        assert dirichlet_form(f, kcip32) / variance(f, pi) >= g - 1e-12


def test_log_sobolev_two_point():
    # symmetric two-point chain P = [[1-a, a], [a, 1-a]]: alpha = a (log-Sobolev on {0,1})
    a = 0.3
    K = two_state(a, a)
    est = log_sobolev_lower_estimate(K, trials=10, seed=1)
    assert est.value >= a - 1e-6
    assert est.value <= spectral_gap(K) / 2 + 1e-6


def test_trace_of_two_state_subset_is_identity():
    K = two_state(0.3, 0.1)
    T = trace_kernel_exact(K, [0])
    assert T.P.shape == (1, 1) and T.P[0, 0] == pytest.approx(1)


def test_trace_keeps_conditioned_law(kcip32):
    idx = [i for i, b in enumerate(kcip32.space.states) if b.bit_count() <= 2]
    T = trace_kernel_exact(kcip32, idx)
    assert row_sum_defect(T) < 1e-12
    pi = stationary_distribution(T)
    cond = kcip32.pi[idx] / kcip32.pi[idx].sum()
    assert np.max(np.abs(pi - cond)) < 1e-12


def test_trace_rejects_closed_complement():
    P = np.array([[0.5, 0.5, 0], [0, 1, 0], [0, 0, 1]])
    with pytest.raises(ReducibleChainError):
        trace_kernel_exact(KernelMatrix(P), [0])


def test_projected_chain_values():
    P = projected_kernel([9, 18, 6], Fraction(1), 9)
    assert P.P[0, 1] == Fraction(1, 15)
    assert P.P[1, 0] == Fraction(8, 25)
    assert all(s == 1 for s in P.P.sum(axis=1))
    assert detailed_balance_defect(P) == 0
    w = stratum_weights([9, 18, 6], Fraction(1), 9)
    assert P.pi[0] == (w[0] + w[1]) / (w[0] + 2 * w[1] + w[2])


def test_projected_rejects_bad_masses():
    with pytest.raises(ConfigError):
        projected_kernel_from_masses([1.0])
    with pytest.raises(ConfigError):
        projected_kernel([9, 0, 6], 1.0, 9)


def test_birth_death_formula_longer_chain():
    P = projected_kernel_from_masses([0.4, 0.3, 0.2, 0.08, 0.02]).as_float()
    for s, t in ((0, 3), (3, 0), (1, 2), (2, 2)):
        assert birth_death_hitting_time(P, s, t) == pytest.approx(
            hitting_times_solve(P, t)[s], rel=1e-12, abs=1e-12)
    with pytest.raises(ConfigError):
        birth_death_hitting_time(KernelMatrix(np.full((3, 3), 1 / 3)), 0, 2)


def test_restriction_rows(kcip32):
    idx = [i for i, b in enumerate(kcip32.space.states) if b.bit_count() <= 3]
    T = trace_kernel_exact(kcip32, idx)
    R = restriction_kernel(T, 1)
    assert len(R) == 27 and row_sum_defect(R) < 1e-12
    assert (R.P >= -1e-15).all()
    with pytest.raises(ConfigError):
        restriction_kernel(T, 3)


def test_madras_randall_report(kcip32):
    idx = [i for i, b in enumerate(kcip32.space.states) if b.bit_count() <= 3]
    rep = madras_randall_check(trace_kernel_exact(kcip32, idx), 3)
    assert rep.holds and rep.margin > 0 and len(rep.restriction_gaps) == 2
    assert set(rep.to_dict()) >= {"gap", "bound", "holds"}


def test_comparison_identity_flows():
    lat = build_torus(3, 2)
    om = enumerate_omega_k(lat, 2)
    Q = build_kernel_matrix(mh_wrap(bl_spec(), uniform_on(om.states)), om)
    A = comparison_constant(Q, Q, direct_edge_flows(Q))
    assert A == pytest.approx(1.0)


def test_comparison_rejects_bad_flows():
    K = two_state(0.3, 0.3)
    with pytest.raises(ConfigError):
        comparison_constant(K, K, {})
    with pytest.raises(ConfigError):
        comparison_constant(K, K, {(0, 1): [((0, 1), 0.5)], (1, 0): [((1, 0), 1.0)]})


def test_comparison_with_extension():
    # K on three states, Q on the first two; state 2 extends as the average
    Pk = np.array([[0.5, 0.25, 0.25], [0.25, 0.5, 0.25], [0.25, 0.25, 0.5]])
    K = KernelMatrix(Pk, np.full(3, 1 / 3))
    Q = two_state(0.5, 0.5)
    ext = {2: {0: 0.5, 1: 0.5}}
    flows = {(0, 1): [((0, 1), 1.0)], (1, 0): [((1, 0), 1.0)]}
    A = comparison_constant(K, Q, flows, embed=[0, 1], extension=ext)
    rng = np.random.default_rng(3)
    for _ in range(50):
        f = rng.normal(size=2)
        fh = extend_function(f, 3, [0, 1], ext)
        assert dirichlet_form(fh, K) <= A * dirichlet_form(f, Q) + 1e-12
    assert variance_comparison_constant([0.5, 0.5], [1 / 3, 1 / 3]) == pytest.approx(1.5)


def test_kernel_report_fields(kcip32):
    rep = kernel_report(kcip32, {"p": 1 / 9})
    assert rep["states"] == 511 and rep["row_sum_defect"] < 1e-14
    assert 0 < rep["gap"] < 1
