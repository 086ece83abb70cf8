"""Flat JSON experiment configuration shared by the CLI and the scripts."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields
from importlib import resources
from pathlib import Path

from .engine import DEFAULT_TOLERANCE, MCConfig
from .samplers import FieldSpec, power_law_spectrum

MODES = ("domain", "sphere", "sobolev-boundary", "embedding-ratio")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    mode: str = "domain"
    name: str = "experiment"
    # field family
    kind: str = "BrownianMotion"
    dim: int = 1
    horizon: float = 1.0
    hurst: float = 0.5
    covariance: str = ""
    variance: float = 1.0
    length_scale: float = 1.0
    spectrum_decay: float = 4.0
    band_limit: int = 32
    # regularity pipeline
    d: int = 0
    p_grid: tuple[float, ...] = (4.0, 8.0, 16.0)
    points_per_axis: int = 1025
    levels: tuple[int, ...] = tuple(range(2, 11))
    n_replicates: int = 2000
    holder_replicates: int = 200
    master_seed: int = 0
    tolerance: float = DEFAULT_TOLERANCE
    strict: bool = False
    sites: str = "anchored"
    extra_pairs: int = 0
    chunk_size: int = 50
    # sphere atlas
    cap_angle: float = math.pi / 3
    transition_width: float = 0.25
    pairs_per_level: int = 4000
    # sobolev boundary and embedding ratio
    p: float = 4.0
    nus: tuple[float, ...] = (0.0, 0.3, 0.45, 0.55, 0.7)
    ms: tuple[int, ...] = (257, 513, 1025)
    t: float = 0.0
    s: float = 1.0
    k_max: int = 8
    # covering numbers
    covering_dim: int = 2
    covering_m: int = 257
    covering_levels: tuple[int, ...] = (3, 4, 5)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode: expected one of {MODES}, got {self.mode!r}")
        for key in ("n_replicates", "chunk_size", "points_per_axis", "k_max", "covering_m", "pairs_per_level"):
            if getattr(self, key) < 1:
                raise ConfigError(f"{key}: must be positive, got {getattr(self, key)}")
        if self.d < 0:
            raise ConfigError(f"d: must be >= 0, got {self.d}")
        if not self.p_grid or any(q < 2 for q in self.p_grid):
            raise ConfigError(f"p_grid: needs values >= 2, got {list(self.p_grid)}")
        if self.tolerance <= 0:
            raise ConfigError(f"tolerance: must be positive, got {self.tolerance}")
        if self.sites not in ("anchored", "all"):
            raise ConfigError(f"sites: expected 'anchored' or 'all', got {self.sites!r}")

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
        types = {f.name: f.default for f in fields(cls)}
        values = {}
        for key, value in raw.items():
            if key not in types:
                raise ConfigError(f"{key}: unknown config key")
            values[key] = _coerce(key, value, types[key])
        cfg = cls(**values)
        cfg.field_spec()
        return cfg

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return ExperimentConfig(**{**asdict(self), "master_seed": int(seed)})

    def field_spec(self) -> FieldSpec:
        kw = {"kind": self.kind, "dim": self.dim, "horizon": self.horizon, "hurst": self.hurst,
              "covariance": self.covariance, "variance": self.variance, "length_scale": self.length_scale}
        if self.kind == "SphereIsotropic":
            kw["spectrum"] = power_law_spectrum(self.spectrum_decay, self.band_limit)
        try:
            return FieldSpec(**kw)
        except ValueError as exc:
            raise ConfigError(f"kind={self.kind}: {exc}") from exc

    def mc_config(self, threads: int = 1) -> MCConfig:
        return MCConfig(n_replicates=self.n_replicates, holder_replicates=self.holder_replicates,
                        levels=self.levels, points_per_axis=self.points_per_axis, master_seed=self.master_seed,
                        threads=threads, chunk_size=self.chunk_size, tolerance=self.tolerance,
                        strict=self.strict, sites=self.sites, extra_pairs=self.extra_pairs)


def _coerce(key, value, default):
    def bad():
        return ConfigError(f"{key}: expected {type(default).__name__}, got {value!r}")

    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise bad()
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise bad()
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise bad()
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise bad()
        return value
    if isinstance(default, tuple):
        if not isinstance(value, list) or not value:
            raise bad()
        elem = default[0]
        return tuple(_coerce(key, v, elem) for v in value)
    raise bad()


def load_config(path) -> ExperimentConfig:
    text = Path(path).read_text()
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return ExperimentConfig.from_dict(raw)


def bundled_configs() -> list[str]:
    root = resources.files("kcfield") / "configs"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def bundled_config_path(name: str) -> Path:
    path = Path(str(resources.files("kcfield") / "configs" / f"{name}.json"))
    if not path.exists():
        raise ConfigError(f"no bundled config named {name!r}; available: {bundled_configs()}")
    return path
