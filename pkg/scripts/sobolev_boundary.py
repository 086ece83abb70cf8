"""Expected fractional Sobolev norm of Brownian motion across nu and lattice size.

Below nu = 1/2 the estimates settle as the lattice is refined; above it they
keep growing. Prints the table and the divergence flag per nu.

    python scripts/sobolev_boundary.py --replicates 200 --p 4
"""

import argparse

from kcfield import FieldSpec
from kcfield.engine import sobolev_boundary


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--p", type=float, default=4.0)
    ap.add_argument("--nus", type=float, nargs="+", default=[0.0, 0.3, 0.45, 0.55, 0.7])
    ap.add_argument("--ms", type=int, nargs="+", default=[257, 513, 1025])
    ap.add_argument("--replicates", type=int, default=200)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    rows = sobolev_boundary(FieldSpec(kind="BrownianMotion"), args.nus, args.ms, args.p, args.replicates, args.seed)
    print(f"{'nu':>5} {'m':>6} {'E|u|^p':>12} {'se':>10} divergent")
    for r in rows:
        print(f"{r.nu:5.2f} {r.m:6d} {r.estimate:12.4f} {r.se:10.4f} {r.divergent}")


if __name__ == "__main__":
    main()
