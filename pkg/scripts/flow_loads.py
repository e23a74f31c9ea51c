"""Comparison constant of the random Bernoulli-Laplace flow against the
perfect kernel, and the intermediate-point rejection rate on larger tori.

    python scripts/flow_loads.py    # a few minutes, dominated by the 5x5 torus
"""
import sys

import numpy as np

from kcip_lab.chains import bl_spec, mh_wrap, perfect_spec, uniform_on
from kcip_lab.cli import to_csv
from kcip_lab.configspace import enumerate_omega_k
from kcip_lab.estimators import sample_independent_start
from kcip_lab.flows import bl_flows_for_comparison, exact_rejection_probability
from kcip_lab.lattice import build_torus
from kcip_lab.spectral import build_kernel_matrix, comparison_constant, spectral_gap


def main():
    rows = []
    for L in (3, 4, 5):
        lat = build_torus(L, 2)
        om = enumerate_omega_k(lat, 2)
        K = build_kernel_matrix(perfect_spec(), om)
        Q = build_kernel_matrix(mh_wrap(bl_spec(), uniform_on(om.states)), om)
        flows, nfb = bl_flows_for_comparison(lat, om)
        A = comparison_constant(K, Q, flows)
        rows.append(("comparison", L, len(om), A, nfb / len(flows), spectral_gap(K) / spectral_gap(Q)))
    rng = np.random.default_rng(0)
    for L in (10, 20, 40):
        lat = build_torus(L, 2)
        rates = [exact_rejection_probability(lat, sample_independent_start(lat, 2, rng),
                                             sample_independent_start(lat, 2, rng))
                 for _ in range(200)]
        rows.append(("rejection", L, lat.n, float(np.mean(rates)), float(np.max(rates)), ""))
    sys.stdout.write(to_csv(("kind", "L", "size", "value", "extra", "gap_ratio"), rows))


if __name__ == "__main__":
    main()
