"""Median SE collision time of two particles versus their initial separation.

    python scripts/collision_times.py --L 16 --replicas 501
"""
import argparse
import sys

from kcip_lab.chains import Configuration
from kcip_lab.cli import to_csv
from kcip_lab.configspace import default_spacing_threshold
from kcip_lab.estimators import collision_time_simulation
from kcip_lab.lattice import build_torus


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--L", type=int, default=16)
    ap.add_argument("--replicas", type=int, default=501)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    lat = build_torus(args.L, 2)
    thr = default_spacing_threshold(lat.n)
    rows = []
    for sep in range(2, args.L // 2 + 1):
        z = Configuration.from_vertices(lat, [0, lat.index((sep, 0))])
        res = collision_time_simulation(lat, z, args.replicas, args.seed)
        rows.append((sep, int(sep > thr), res.quantile(0.25), res.quantile(0.5),
                     res.quantile(0.75), sum(res.censored)))
    sys.stdout.write(to_csv(("separation", "well_spaced", "q25", "median", "q75", "censored"),
                            rows))


if __name__ == "__main__":
    main()
