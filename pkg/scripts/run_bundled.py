"""Run every bundled config through the CLI and print a one-line verdict each.

    python scripts/run_bundled.py --out results --threads 1
"""

import argparse
import time

from kcfield.cli import main as cli_main
from kcfield.config import bundled_config_path, bundled_configs, load_config


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="results")
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--only", nargs="*", help="subset of config names")
    args = ap.parse_args()
    names = args.only or bundled_configs()
    for name in names:
        mode = load_config(bundled_config_path(name)).mode
        t0 = time.perf_counter()
        code = cli_main(["verify", "--config", name, "--out", args.out, "--threads", str(args.threads)])
        print(f"  [{mode}] exit={code} in {time.perf_counter() - t0:.1f} s")


if __name__ == "__main__":
    main()
