"""Exact KCIP spectral gaps on small rings and the 3x3 torus.

    python scripts/gap_scaling.py --c 1 > gaps.csv
"""
import argparse
import sys

from kcip_lab.chains import kcip_spec
from kcip_lab.cli import to_csv
from kcip_lab.configspace import enumerate_kcip_space
from kcip_lab.lattice import build_torus
from kcip_lab.spectral import build_kernel_matrix, spectral_gap


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--c", type=float, default=1.0)
    ap.add_argument("--rings", type=int, nargs="+", default=[3, 4, 5, 6, 7, 8, 9, 10, 11, 12])
    args = ap.parse_args()
    rows = []
    shapes = [(L, 1) for L in args.rings] + [(3, 2)]
    for L, d in shapes:
        lat = build_torus(L, d)
        K = build_kernel_matrix(kcip_spec(args.c / lat.n), enumerate_kcip_space(lat), cap=2**lat.n)
        gap = spectral_gap(K)
        rows.append((L, d, lat.n, len(K), gap, 1 / gap))
    sys.stdout.write(to_csv(("L", "d", "n", "states", "gap", "relaxation_time"), rows))


if __name__ == "__main__":
    main()
