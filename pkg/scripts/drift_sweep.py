"""Replica means of V after epsilon*n^3 steps over a range of start counts,
with the least-squares contraction fit.

    python scripts/drift_sweep.py --L 10 --starts 1 5 10 20 30 40
"""
import argparse
import sys

from kcip_lab.cli import to_csv
from kcip_lab.estimators import drift_estimate, fit_drift
from kcip_lab.lattice import build_torus


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--L", type=int, default=10)
    ap.add_argument("--c", type=float, default=1.0)
    ap.add_argument("--epsilon", type=float, default=0.1)
    ap.add_argument("--starts", type=int, nargs="+", default=[1, 5, 10, 20, 30, 40])
    ap.add_argument("--replicas", type=int, default=200)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    lat = build_torus(args.L, 2)
    ests = [drift_estimate(lat, args.c, args.epsilon, v, args.replicas, args.seed)
            for v in args.starts]
    sys.stdout.write(to_csv(("V1", "horizon", "mean", "half_width"), [e.row() for e in ests]))
    if len(ests) > 1:
        alpha, icpt = fit_drift(ests)
        print(f"# alpha={alpha!r} intercept={icpt!r}", file=sys.stderr)


if __name__ == "__main__":
    main()
