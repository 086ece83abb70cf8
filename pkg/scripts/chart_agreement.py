"""Chart-wise regularity of an isotropic sphere field across several seeds.

For each seed, prints both charts' moment exponents, the t_star discrepancy
and the largest z-score of the epsilon difference.

    python scripts/chart_agreement.py --seeds 0 1 2 3
"""

import argparse

from kcfield.config import bundled_config_path, load_config
from kcfield.manifold import chartwise_regularity, stereographic_atlas


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--config", default=str(bundled_config_path("sphere-decay4")))
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3])
    args = ap.parse_args()
    base = load_config(args.config)
    atlas = stereographic_atlas(base.cap_angle)
    for seed in args.seeds:
        cfg = base.with_seed(seed)
        res = chartwise_regularity(cfg.field_spec(), atlas, cfg.d, cfg.p_grid, cfg.mc_config(),
                                   pairs_per_level=cfg.pairs_per_level)
        eps = {name: [round(r.epsilon_hat, 3) for r in rep.per_p] for name, rep in res.reports.items()}
        z = max(res.epsilon_z.values())
        print(f"seed {seed}: eps {eps}, t_star discrepancy {res.t_star_discrepancy:.3f}, "
              f"max z {z:.2f}, verdict {res.verdict}")


if __name__ == "__main__":
    main()
