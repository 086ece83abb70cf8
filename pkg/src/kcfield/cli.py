"""Batch driver: ``kcfield {verify,sobolev-boundary,embedding-ratio,sample,covering}``.

Exit codes: 0 on a passing or constant verdict, 2 on a failing verdict,
1 on any configuration or pipeline error.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, ExperimentConfig, bundled_config_path, load_config
from .engine import default_lattice, run_verification, sobolev_boundary
from .grid import BoxDomain, entropy_slope, make_lattice
from .manifold import chartwise_regularity, stereographic_atlas
from .norms import embedding_ratio_bounded, embedding_ratio_table
from .samplers import sample, sample_sphere

EXIT_OK, EXIT_ERROR, EXIT_FAIL = 0, 1, 2


def _clean(obj):
    """Make a report JSON-safe: numpy scalars to Python, non-finite floats to None."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.generic):
        obj = obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def write_json(path: Path, payload: dict):
    path.write_text(json.dumps(_clean(payload), indent=2) + "\n")


def write_csv(path: Path, header: list[str], rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in row])


def _alpha_str(alpha) -> str:
    return ";".join(str(int(a)) for a in alpha)


def _structure_rows(data: dict, chart: str | None = None):
    for (alpha, p), sf in data.items():
        for lag, est, se in zip(sf.lags, sf.estimates, sf.ses):
            row = [float(p), _alpha_str(alpha), float(lag), float(est), float(se)]
            yield ([chart] + row) if chart else row


def _out(cfg: ExperimentConfig, args, suffix: str) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out / f"{cfg.name}_{suffix}"


# ---------------------------------------------------------------------------
# commands

def cmd_verify(cfg: ExperimentConfig, args) -> int:
    if cfg.mode == "sobolev-boundary":
        return cmd_sobolev_boundary(cfg, args)
    if cfg.mode == "embedding-ratio":
        return cmd_embedding_ratio(cfg, args)
    spec = cfg.field_spec()
    mc = cfg.mc_config(args.threads)
    if cfg.mode == "sphere":
        atlas = stereographic_atlas(cfg.cap_angle)
        result = chartwise_regularity(spec, atlas, cfg.d, cfg.p_grid, mc, pairs_per_level=cfg.pairs_per_level)
        payload = result.to_dict()
        payload["config"] = cfg.to_dict()
        write_json(_out(cfg, args, "report.json"), payload)
        rows = [r for name, data in result.structure.items() for r in _structure_rows(data, name)]
        write_csv(_out(cfg, args, "structure.csv"), ["chart", "p", "alpha", "lag", "estimate", "se"], rows)
        verdict = result.verdict
        summary = ", ".join(f"{k}: t_star={r.t_star}, empirical_t={r.empirical_t}" for k, r in result.reports.items())
    else:
        report, data = run_verification(spec, cfg.d, cfg.p_grid, mc, default_lattice(spec, cfg.points_per_axis))
        payload = report.to_dict()
        payload["config"] = cfg.to_dict()
        write_json(_out(cfg, args, "report.json"), payload)
        write_csv(_out(cfg, args, "structure.csv"), ["p", "alpha", "lag", "estimate", "se"], _structure_rows(data))
        verdict = report.verdict
        summary = f"t_star={report.t_star}, empirical_t={report.empirical_t}"
    print(f"{cfg.name}: verdict={verdict} ({summary})")
    return EXIT_OK if verdict in ("pass", "constant") else EXIT_FAIL


def cmd_sobolev_boundary(cfg: ExperimentConfig, args) -> int:
    rows = sobolev_boundary(cfg.field_spec(), cfg.nus, cfg.ms, cfg.p, cfg.n_replicates, cfg.master_seed,
                            d=cfg.d, threads=args.threads, chunk_size=cfg.chunk_size)
    write_csv(_out(cfg, args, "boundary.csv"), ["nu", "m", "estimate", "se", "divergent"],
              [[r.nu, r.m, r.estimate, r.se, str(r.divergent).lower()] for r in rows])
    flags = {r.nu: r.divergent for r in rows}
    print(f"{cfg.name}: divergence flags " + ", ".join(f"nu={nu}: {f}" for nu, f in flags.items()))
    return EXIT_OK


def cmd_embedding_ratio(cfg: ExperimentConfig, args) -> int:
    rows = embedding_ratio_table(cfg.t, cfg.s, cfg.p, cfg.k_max, cfg.points_per_axis)
    write_csv(_out(cfg, args, "embedding.csv"), ["k", "holder", "sobolev", "ratio"],
              [[r.k, r.holder, r.sobolev, r.ratio] for r in rows])
    bounded = embedding_ratio_bounded(rows)
    print(f"{cfg.name}: ratio bounded by 10x the k=1 value: {bounded}")
    return EXIT_OK if bounded else EXIT_FAIL


def cmd_sample(cfg: ExperimentConfig, args) -> int:
    spec = cfg.field_spec()
    if spec.kind == "SphereIsotropic":
        text = sample_sphere(spec, cfg.master_seed).to_csv()
    else:
        text = sample(spec, default_lattice(spec, cfg.points_per_axis), cfg.master_seed).to_csv()
    path = _out(cfg, args, "sample.csv")
    path.write_text(text)
    print(f"{cfg.name}: wrote {path}")
    return EXIT_OK


def cmd_covering(cfg: ExperimentConfig, args) -> int:
    n = cfg.covering_dim
    lattice = make_lattice(BoxDomain.unit(n), cfg.covering_m)
    slope, counts = entropy_slope(lattice, cfg.covering_levels)
    write_csv(_out(cfg, args, "covering.csv"), ["k", "radius", "count"],
              [[k, 2.0**-k, c] for k, c in zip(cfg.covering_levels, counts)])
    print(f"{cfg.name}: entropy slope {slope:.4f} for n={n}")
    return EXIT_OK


COMMANDS = {
    "verify": cmd_verify,
    "sobolev-boundary": cmd_sobolev_boundary,
    "embedding-ratio": cmd_embedding_ratio,
    "sample": cmd_sample,
    "covering": cmd_covering,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kcfield", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True,
                       help="path to a JSON config, or the name of a bundled config (e.g. bm)")
        p.add_argument("--seed", type=int, default=None, help="override master_seed")
        p.add_argument("--out", default="results", help="output directory")
        p.add_argument("--threads", type=int, default=1, help="worker threads (results do not depend on it)")
    return parser


def _resolve_config(ref: str) -> ExperimentConfig:
    path = Path(ref)
    if not path.exists() and not ref.endswith(".json"):
        path = bundled_config_path(ref)
    return load_config(path)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.threads < 1:
            raise ConfigError(f"--threads must be >= 1, got {args.threads}")
        cfg = _resolve_config(args.config)
        if args.seed is not None:
            cfg = cfg.with_seed(args.seed)
        return COMMANDS[args.command](cfg, args)
    except (ConfigError, ValueError, OSError, np.linalg.LinAlgError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
