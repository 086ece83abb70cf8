"""Greedy covering numbers of the unit cube and their log2 growth rate.

    python scripts/covering_scaling.py --dim 2 --m 257 --levels 3 4 5
"""

import argparse

from kcfield.grid import BoxDomain, entropy_slope, make_lattice


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--dim", type=int, default=2)
    ap.add_argument("--m", type=int, default=257)
    ap.add_argument("--levels", type=int, nargs="+", default=[3, 4, 5])
    args = ap.parse_args()
    slope, counts = entropy_slope(make_lattice(BoxDomain.unit(args.dim), args.m), args.levels)
    for k, c in zip(args.levels, counts):
        print(f"k={k} radius={2.0**-k:.5f} N={c}")
    print(f"slope {slope:.3f} (dimension {args.dim})")


if __name__ == "__main__":
    main()
