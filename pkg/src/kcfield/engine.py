"""Moment-condition estimation, regularity prediction and end-to-end verification.

The pipeline estimates E|d^a X(x) - d^a X(y)|^p over dyadic lags, fits the
log-log slope n + eps, predicts the sample regularity d + min(eps/p, 1 - n/p),
and compares it with the empirical Hölder exponent of the same samples.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .grid import BoxDomain, Lattice, PointPairSet, dyadic_pairs, make_lattice
from .norms import (HolderEstimate, MultiIndex, NormSpec, fit_holder_slope, gagliardo_sums, max_increments,
                    multi_indices)
from .samplers import FieldSpec, LatticeSampler, replicate_rng

DEGENERATE_THRESHOLD = 1e-300
DEFAULT_TOLERANCE = 0.12


@dataclass(frozen=True)
class MCConfig:
    n_replicates: int = 2000
    holder_replicates: int = 200
    levels: tuple[int, ...] = tuple(range(2, 11))
    points_per_axis: int = 1025
    master_seed: int = 0
    threads: int = 1
    chunk_size: int = 50
    tolerance: float = DEFAULT_TOLERANCE
    strict: bool = False
    sites: str = "anchored"
    extra_pairs: int = 0

    def __post_init__(self):
        object.__setattr__(self, "levels", tuple(int(k) for k in self.levels))
        if self.n_replicates < 1 or self.holder_replicates < 0 or self.chunk_size < 1 or self.threads < 1:
            raise ValueError("replicate counts, chunk size and threads must be positive")
        if len(self.levels) < 2:
            raise ValueError("need at least two dyadic levels")

    def to_dict(self) -> dict:
        # threads never changes a result, so it is left out of reports
        d = asdict(self)
        d.pop("threads")
        d["levels"] = list(self.levels)
        return d


def default_lattice(spec: FieldSpec, points_per_axis: int) -> Lattice:
    upper = spec.horizon if spec.kind == "BrownianMotion" else 1.0
    return make_lattice(BoxDomain((0.0,) * spec.dim, (upper,) * spec.dim), points_per_axis)


# ---------------------------------------------------------------------------
# replicate loop

def run_replicates(source, n_replicates: int, master_seed: int, work, threads: int = 1, chunk_size: int = 50):
    """Apply ``work(draws, indices)`` to fixed-size replicate chunks, in index order.

    ``source.draw(rngs)`` yields the sample arrays; replicate ``i`` always
    uses ``replicate_rng(master_seed, i)`` and lands in the same chunk, so the
    output does not depend on ``threads``.
    """
    starts = list(range(0, n_replicates, chunk_size))

    def one(start):
        idx = np.arange(start, min(start + chunk_size, n_replicates))
        return work(source.draw([replicate_rng(master_seed, i) for i in idx]), idx)

    if threads == 1:
        return [one(s) for s in starts]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(one, starts))


def jackknife_se(loo: np.ndarray) -> np.ndarray:
    """Jackknife standard error from leave-one-out estimates along axis 0."""
    n = loo.shape[0]
    return np.sqrt((n - 1) / n * np.sum((loo - loo.mean(axis=0)) ** 2, axis=0))


def _loo_means(per_rep: np.ndarray) -> np.ndarray:
    n = per_rep.shape[0]
    return (per_rep.sum(axis=0) - per_rep) / (n - 1)


# ---------------------------------------------------------------------------
# structure functions

@dataclass(frozen=True)
class StructureFunctionData:
    p: float
    alpha: MultiIndex
    lags: np.ndarray
    estimates: np.ndarray
    ses: np.ndarray
    n_replicates: int
    replicate_means: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        lags = np.asarray(self.lags, float)
        if np.any(lags <= 0) or np.any(np.diff(lags) <= 0):
            raise ValueError("lags must be positive and strictly increasing")
        if np.any(np.asarray(self.estimates) < 0):
            raise ValueError("moment estimates must be nonnegative")
        object.__setattr__(self, "lags", lags)
        object.__setattr__(self, "estimates", np.asarray(self.estimates, float))
        object.__setattr__(self, "ses", np.asarray(self.ses, float))
        object.__setattr__(self, "alpha", MultiIndex(self.alpha))

    @property
    def points(self) -> list[tuple[float, float, float]]:
        return list(zip(self.lags.tolist(), self.estimates.tolist(), self.ses.tolist()))

    def scaled(self, c: float) -> "StructureFunctionData":
        """Data for the field c X: every moment picks up |c|^p."""
        f = abs(c) ** self.p
        reps = None if self.replicate_means is None else self.replicate_means * f
        return StructureFunctionData(self.p, self.alpha, self.lags, self.estimates * f, self.ses * f,
                                     self.n_replicates, reps)

    def to_rows(self) -> list[dict]:
        a = "(" + ",".join(map(str, self.alpha)) + ")"
        return [{"p": self.p, "alpha": a, "lag": h, "estimate": e, "se": s} for h, e, s in self.points]


def _pair_groups(pairs: PointPairSet, mask) -> list[tuple[float, np.ndarray, np.ndarray]]:
    if mask is not None:
        pairs = pairs.restrict(mask)
    groups = [(lag, pairs.a[pos], pairs.b[pos]) for lag, pos in pairs.groups()]
    if not groups:
        raise ValueError("no admissible pairs: every lag group is empty")
    return groups


@dataclass
class _Collected:
    lags: np.ndarray
    moments: dict            # (alpha, p) -> (N, G) per-replicate pair means
    holder: dict             # alpha -> (Nh, K) max increments


def collect_statistics(source, pairs: PointPairSet, alphas, p_grid, config: MCConfig, levels=None) -> _Collected:
    """One pass over the replicates computing every structure function and max-increment table."""
    lattice = source.lattice
    mask = getattr(source, "mask", None)
    groups = _pair_groups(pairs, mask)
    p_grid = [float(p) for p in p_grid]
    alphas = [tuple(a) for a in alphas]
    levels = list(config.levels if levels is None else levels)
    n_holder = min(config.holder_replicates, config.n_replicates)

    def work(draws, idx):
        B = len(idx)
        mom = {}
        for alpha in alphas:
            if alpha not in draws:
                raise ValueError(f"derivative {alpha} unavailable from {type(source).__name__}")
            flat = draws[alpha].reshape(B, -1)
            for p in p_grid:
                mom[alpha, p] = np.empty((B, len(groups)))
            for g, (_, a, b) in enumerate(groups):
                d = np.abs(flat[:, b] - flat[:, a])
                for p in p_grid:
                    mom[alpha, p][:, g] = np.mean(d**p, axis=1)
        hold = {}
        take = idx < n_holder
        if take.any() and levels:
            for alpha in alphas:
                hold[alpha] = max_increments(draws[alpha][take], lattice, levels, mask, config.sites)
        return mom, hold

    chunks = run_replicates(source, config.n_replicates, config.master_seed, work,
                            config.threads, config.chunk_size)
    moments = {k: np.concatenate([c[0][k] for c in chunks]) for k in chunks[0][0]}
    holder = {}
    for alpha in alphas:
        parts = [c[1][alpha] for c in chunks if alpha in c[1]]
        if parts:
            holder[alpha] = np.concatenate(parts)
    return _Collected(np.array([g[0] for g in groups]), moments, holder)


def _structure_data(col: _Collected, alpha, p, n_replicates) -> StructureFunctionData:
    per_rep = col.moments[tuple(alpha), float(p)]
    est = per_rep.mean(axis=0)
    se = jackknife_se(_loo_means(per_rep)) if n_replicates > 1 else np.zeros_like(est)
    return StructureFunctionData(float(p), alpha, col.lags, est, se, n_replicates, per_rep)


def estimate_structure_function(spec: FieldSpec, lattice: Lattice, pairs: PointPairSet, alpha, p: float,
                                n_replicates: int, master_seed: int, threads: int = 1,
                                min_replicates: int = 100) -> StructureFunctionData:
    """Monte Carlo estimate of E|d^alpha X(x) - d^alpha X(y)|^p per lag group, with jackknife SEs."""
    alpha = MultiIndex(alpha)
    if alpha.order > spec.d_avail:
        raise ValueError(f"derivative order {alpha.order} unavailable for {spec.kind} (d_avail={spec.d_avail})")
    if n_replicates < min_replicates:
        raise ValueError(f"need at least {min_replicates} replicates, got {n_replicates}")
    cfg = MCConfig(n_replicates=n_replicates, holder_replicates=0, master_seed=master_seed, threads=threads)
    col = collect_statistics(LatticeSampler(spec, lattice), pairs, [alpha], [p], cfg, levels=[])
    return _structure_data(col, alpha, p, n_replicates)


# ---------------------------------------------------------------------------
# exponent fit

@dataclass(frozen=True)
class MomentFit:
    n: int
    theta_hat: float | None
    intercept: float | None
    epsilon_hat: float | None
    r_squared: float | None
    theta_se: float | None
    degenerate: bool = False
    n_points: int = 0

    @property
    def epsilon_se(self) -> float | None:
        return self.theta_se


def _wls(x, y, w):
    """Weighted least squares line; ``y`` may carry extra leading axes."""
    w = w / w.sum()
    xm = float(w @ x)
    ym = y @ w
    xc = x - xm
    sxx = float(w @ (xc * xc))
    slope = ((y - ym[..., None]) * xc) @ w / sxx
    return slope, ym - slope * xm


def fit_moment_exponent(data: StructureFunctionData, n: int, min_points: int = 3) -> MomentFit:
    """Fit log E|dX|^p = c + theta log h by weighted least squares.

    Weights are (estimate / se)^2, the inverse variance of log(estimate);
    plain least squares when any standard error is zero. The slope's error
    is a jackknife over replicates when per-replicate means are available.
    """
    est, se, lags = data.estimates, data.ses, data.lags
    if len(lags) < min_points:
        raise ValueError(f"need at least {min_points} lag points, got {len(lags)}")
    if np.all(est < DEGENERATE_THRESHOLD):
        return MomentFit(n, None, None, None, None, None, degenerate=True, n_points=len(lags))
    use = est >= DEGENERATE_THRESHOLD
    if use.sum() < min_points:
        raise ValueError(f"only {int(use.sum())} lag points with nonzero moments; need {min_points}")
    x, y = np.log(lags[use]), np.log(est[use])
    w = (est[use] / se[use]) ** 2 if np.all(se[use] > 0) else np.ones(use.sum())
    slope, icpt = _wls(x, y, w)
    slope, icpt = float(slope), float(icpt)
    resid = y - icpt - slope * x
    wn = w / w.sum()
    ss_tot = float(wn @ (y - wn @ y) ** 2)
    r2 = 1.0 - float(wn @ resid**2) / ss_tot if ss_tot > 0 else 1.0
    reps = data.replicate_means
    if reps is not None and reps.shape[0] > 2:
        loo = _loo_means(reps[:, use])
        with np.errstate(divide="ignore"):
            loo_slopes, _ = _wls(x, np.log(loo), w)
        theta_se = float(jackknife_se(loo_slopes[np.isfinite(loo_slopes)]))
    elif len(x) > 2:
        xc = x - wn @ x
        theta_se = math.sqrt(float(wn @ resid**2) / (len(x) - 2) / float(wn @ xc**2))
    else:
        theta_se = 0.0
    return MomentFit(n, slope, icpt, slope - n, r2, theta_se, False, int(use.sum()))


# ---------------------------------------------------------------------------
# regularity prediction

def clamp_epsilon(epsilon: float, p: float) -> tuple[float, bool]:
    if epsilon <= 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    if epsilon > p:
        warnings.warn(f"epsilon={epsilon:.4g} exceeds p={p}; a moment bound with epsilon > p forces a.s. "
                      "constant samples, clamping to epsilon = p", stacklevel=3)
        return float(p), True
    return float(epsilon), False


def predict_t_max(d: int, p: float, epsilon: float, n: int) -> float:
    """Regularity bound d + min(eps/p, 1 - n/p), with eps clamped into (0, p]."""
    if p <= 1:
        raise ValueError(f"p must exceed 1, got {p}")
    eps, _ = clamp_epsilon(epsilon, p)
    return d + min(eps / p, 1.0 - n / p)


# ---------------------------------------------------------------------------
# expected Sobolev norms

def _sobolev_terms(draws, lattice: Lattice, d: int, nus, p: float, mask=None) -> np.ndarray:
    """Per-replicate ||X||^p_{W^{d+nu}_p} for each nu, shape ``(B, len(nus))``."""
    zero = (0,) * lattice.dim
    w = lattice.dual_cell_weights()
    if mask is not None:
        w = np.where(mask, w, 0.0)
    axes = tuple(range(1, lattice.dim + 1))
    B = draws[zero].shape[0]
    nus = [float(nu) for nu in nus]
    out = np.zeros((B, len(nus)))
    lp = np.sum(w * np.abs(draws[zero]) ** p, axis=axes)
    frac = [j for j, nu in enumerate(nus) if nu > 0]
    whole = [j for j, nu in enumerate(nus) if nu == 0]
    out[:, frac] += lp[:, None]
    if whole:
        full = sum(np.sum(w * np.abs(draws[tuple(a)]) ** p, axis=axes) for a in multi_indices(lattice.dim, d))
        out[:, whole] += full[:, None]
    if frac:
        exps = [lattice.dim + nus[j] * p for j in frac]
        for a in multi_indices(lattice.dim, d, exact=True):
            out[:, frac] += gagliardo_sums(draws[tuple(a)], lattice, p, exps, w)
    return out


def _check_nu(nu: float):
    if not 0 <= nu < 1:
        raise ValueError(f"fractional smoothness nu must lie in [0, 1), got {nu}")


def expected_sobolev_norm(spec: FieldSpec, lattice: Lattice, s, p: float, n_replicates: int, master_seed: int,
                          threads: int = 1, chunk_size: int = 50) -> tuple[float, float]:
    """Monte Carlo mean and standard error of ||X||^p_{W^s_p} on ``lattice``."""
    s = s if isinstance(s, NormSpec) else NormSpec(float(s))
    d, nu = s.integer_part, s.fractional_part
    if d > spec.d_avail:
        raise ValueError(f"W^{s.t}_p needs derivatives of order {d}; {spec.kind} provides {spec.d_avail}")
    sampler = LatticeSampler(spec, lattice)
    chunks = run_replicates(sampler, n_replicates, master_seed,
                            lambda draws, idx: _sobolev_terms(draws, lattice, d, [nu], p),
                            threads, chunk_size)
    vals = np.concatenate(chunks)[:, 0]
    se = float(vals.std(ddof=1) / math.sqrt(len(vals))) if len(vals) > 1 else 0.0
    return float(vals.mean()), se


@dataclass(frozen=True)
class BoundaryRow:
    nu: float
    m: int
    estimate: float
    se: float
    divergent: bool


def sobolev_boundary(spec: FieldSpec, nus, ms, p: float, n_replicates: int, master_seed: int, d: int = 0,
                     threads: int = 1, chunk_size: int = 50, growth_floor: float = 0.01) -> list[BoundaryRow]:
    """E||X||^p_{W^{d+nu}_p} against lattice refinement, with divergence flags.

    Samples live on the finest lattice; coarser lattices are exact
    restrictions of the same samples. For each nu the increments of the
    estimate between the last three resolutions are compared: a quadrature
    of a convergent integral has shrinking increments, a divergent one has
    growing increments. ``growth_floor`` ignores increments below that
    fraction of the estimate.
    """
    ms = sorted(int(m) for m in ms)
    if len(ms) < 3:
        raise ValueError("need at least three resolutions to judge divergence")
    for nu in nus:
        _check_nu(nu)
    finest = default_lattice(spec, ms[-1])
    strides = []
    for m in ms:
        if (ms[-1] - 1) % (m - 1):
            raise ValueError(f"resolution {m} does not nest in {ms[-1]}")
        strides.append((ms[-1] - 1) // (m - 1))
    sampler = LatticeSampler(spec, finest)
    dim = finest.dim

    def work(draws, idx):
        per_m = []
        for m, st in zip(ms, strides):
            lat = default_lattice(spec, m)
            sl = (slice(None),) + (slice(None, None, st),) * dim
            sub = {a: v[sl] for a, v in draws.items()}
            per_m.append(_sobolev_terms(sub, lat, d, nus, p))
        return np.stack(per_m, axis=1)          # (B, len(ms), len(nus))

    vals = np.concatenate(run_replicates(sampler, n_replicates, master_seed, work, threads, chunk_size))
    means = vals.mean(axis=0)
    ses = vals.std(axis=0, ddof=1) / math.sqrt(vals.shape[0]) if vals.shape[0] > 1 else np.zeros_like(means)
    rows = []
    for j, nu in enumerate(nus):
        d1 = means[-2, j] - means[-3, j]
        d2 = means[-1, j] - means[-2, j]
        divergent = bool(d2 > d1 and d2 > growth_floor * abs(means[-1, j]))
        for i, m in enumerate(ms):
            rows.append(BoundaryRow(float(nu), m, float(means[i, j]), float(ses[i, j]), divergent))
    return rows


# ---------------------------------------------------------------------------
# end-to-end verification

@dataclass
class PRow:
    p: float
    epsilon_hat: float | None
    epsilon_se: float | None
    theta_hat: float | None
    intercept: float | None
    r_squared: float | None
    t_max: float | None
    clamped: bool = False
    degenerate: bool = False


@dataclass
class RegularityReport:
    spec: dict
    d: int
    n: int
    per_p: list[PRow]
    t_star: float | None
    empirical_t: float | None
    empirical_se: float | None
    verdict: str
    tolerance: float
    p_grid: list[float]
    mc_config: dict
    seeds: dict
    alphas: list[list[int]]
    holder: list[dict] = field(default_factory=list)
    chart: str | None = None

    @property
    def degenerate(self) -> bool:
        return self.verdict == "constant"

    def to_dict(self) -> dict:
        out = {}
        if self.chart is not None:
            out["chart"] = self.chart
        out.update({
            "spec": self.spec,
            "d": self.d,
            "n": self.n,
            "p_grid": self.p_grid,
            "alphas": self.alphas,
            "per_p": [asdict(r) for r in self.per_p],
            "t_star": self.t_star,
            "empirical_t": self.empirical_t,
            "empirical_se": self.empirical_se,
            "verdict": self.verdict,
            "tolerance": self.tolerance,
            "holder": self.holder,
            "mc_config": self.mc_config,
            "seeds": self.seeds,
        })
        return out


def _verdict(t_star, empirical_t, tolerance, degenerate) -> str:
    if degenerate:
        return "constant"
    if t_star is None or empirical_t is None:
        return "inconclusive"
    return "pass" if abs(empirical_t - t_star) <= tolerance else "fail"


def verify_source(source, spec_dict: dict, n: int, d: int, p_grid, config: MCConfig,
                  pairs: PointPairSet | None = None, chart: str | None = None):
    """Regularity pipeline on any sample source; returns (report, structure data, fits)."""
    lattice = source.lattice
    if d > source.d_avail:
        raise ValueError(f"derivative order {d} unavailable (d_avail={source.d_avail})")
    order_alphas = multi_indices(lattice.dim, d, exact=True)
    alphas = multi_indices(lattice.dim, d) if config.strict else order_alphas
    if pairs is None:
        pairs = dyadic_pairs(lattice, config.levels, config.extra_pairs, seed=config.master_seed)
    p_grid = [float(p) for p in p_grid]
    col = collect_statistics(source, pairs, alphas, p_grid, config)

    data = {(tuple(a), p): _structure_data(col, a, p, config.n_replicates) for a in alphas for p in p_grid}
    fits = {k: fit_moment_exponent(v, n) for k, v in data.items()}

    rows = []
    for p in p_grid:
        live = [fits[tuple(a), p] for a in alphas if not fits[tuple(a), p].degenerate]
        if not live:
            rows.append(PRow(p, None, None, None, None, None, None, degenerate=True))
            continue
        worst = min(live, key=lambda f: f.epsilon_hat)
        eps = worst.epsilon_hat
        t_max, clamped = None, False
        if eps > 0:
            eps_c, clamped = clamp_epsilon(eps, p)
            t_max = d + min(eps_c / p, 1.0 - n / p)
        rows.append(PRow(p, eps, worst.epsilon_se, worst.theta_hat, worst.intercept, worst.r_squared,
                         t_max, clamped))
    degenerate = all(r.degenerate for r in rows)
    t_values = [r.t_max for r in rows if r.t_max is not None]
    t_star = max(t_values) if t_values else None

    holder_fits = []
    for a in order_alphas:
        table = col.holder.get(tuple(a))
        if table is not None:
            holder_fits.append((a, fit_holder_slope(table, config.levels, lattice, config.sites)))
    empirical_t = empirical_se = None
    live_h = [(a, h) for a, h in holder_fits if not h.constant]
    if live_h:
        a_min, h_min = min(live_h, key=lambda ah: ah[1].slope)
        empirical_t, empirical_se = d + h_min.slope, h_min.se

    report = RegularityReport(
        spec=spec_dict, d=d, n=n, per_p=rows, t_star=t_star, empirical_t=empirical_t,
        empirical_se=empirical_se, verdict=_verdict(t_star, empirical_t, config.tolerance, degenerate),
        tolerance=config.tolerance, p_grid=p_grid, mc_config=config.to_dict(),
        seeds={"master_seed": config.master_seed, "derivation": "SeedSequence((master_seed, replicate_index))",
               "replicates": config.n_replicates},
        alphas=[list(a) for a in alphas],
        holder=[{"alpha": list(a), **_holder_dict(h)} for a, h in holder_fits],
        chart=chart,
    )
    return report, data, fits


def _holder_dict(h: HolderEstimate) -> dict:
    return {"slope": h.slope, "se": h.se, "constant": h.constant, "sites": h.sites, "rows": h.to_rows()}


def run_verification(spec: FieldSpec, d: int, p_grid, mc_config: MCConfig | None = None,
                     lattice: Lattice | None = None):
    """Full pipeline for a lattice field family. Returns ``(report, structure_data)``."""
    config = mc_config or MCConfig()
    lattice = lattice or default_lattice(spec, config.points_per_axis)
    if d > spec.d_avail:
        raise ValueError(f"{spec.kind} provides derivatives up to order {spec.d_avail}, not {d}")
    report, data, _ = verify_source(LatticeSampler(spec, lattice), spec.to_dict(), spec.dim, d, p_grid, config)
    return report, data
