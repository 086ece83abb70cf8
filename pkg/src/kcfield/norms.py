"""Discrete Hölder and fractional Sobolev norms, finite differences, and
empirical Hölder-exponent estimation from sample paths."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .grid import BoxDomain, Lattice
from .samplers import GridField

EXHAUSTIVE_1D_MAX = 513
DEFAULT_PAIR_BUDGET = 10**6


class MultiIndex(tuple):
    """Tuple of nonnegative derivative orders, one per axis."""

    def __new__(cls, entries):
        entries = tuple(int(a) for a in np.atleast_1d(entries))
        if any(a < 0 for a in entries):
            raise ValueError(f"multi-index entries must be nonnegative, got {entries}")
        return super().__new__(cls, entries)

    @property
    def order(self) -> int:
        return sum(self)


def multi_indices(dim: int, order: int, exact: bool = False) -> list[MultiIndex]:
    """All multi-indices of length ``dim`` with ``|alpha| <= order`` (or ``== order``)."""
    out = [MultiIndex(a) for a in itertools.product(range(order + 1), repeat=dim) if sum(a) <= order]
    if exact:
        out = [a for a in out if a.order == order]
    return sorted(out, key=lambda a: (a.order, a))


@dataclass(frozen=True)
class NormSpec:
    """Smoothness index split into integer part and fractional part in [0, 1)."""

    t: float
    p: float | None = None

    def __post_init__(self):
        if self.t < 0:
            raise ValueError(f"smoothness must be nonnegative, got {self.t}")
        if self.p is not None and not 1 < self.p < math.inf:
            raise ValueError(f"p must lie in (1, inf), got {self.p}")

    @property
    def integer_part(self) -> int:
        return int(math.floor(self.t))

    @property
    def fractional_part(self) -> float:
        return self.t - self.integer_part


def _as_norm_spec(t) -> NormSpec:
    return t if isinstance(t, NormSpec) else NormSpec(float(t))


# ---------------------------------------------------------------------------
# finite differences

def finite_difference(field: GridField, alpha) -> GridField:
    """Central differences, applied ``alpha_i`` times along axis ``i``.

    Each application trims one point from both ends of that axis, so the
    returned field lives on the trimmed sub-box. The mask, if any, keeps a
    point only when its whole stencil is valid.
    """
    alpha = MultiIndex(alpha)
    lat = field.lattice
    if len(alpha) != lat.dim:
        raise ValueError(f"multi-index {alpha} does not match dimension {lat.dim}")
    if alpha.order > 2:
        raise ValueError(f"finite differences support |alpha| <= 2, got {alpha}")
    for i, a in enumerate(alpha):
        if a and lat.shape[i] < 2 * alpha.order + 1:
            raise ValueError(f"stencil of order {alpha.order} does not fit {lat.shape[i]} points on axis {i}")
    vals = np.asarray(field.values, float)
    mask = None if field.mask is None else field.mask.copy()
    lower = np.asarray(lat.domain.lower, float)
    upper = np.asarray(lat.domain.upper, float)
    shape = list(lat.shape)
    h = lat.spacing
    for axis, a in enumerate(alpha):
        for _ in range(a):
            hi = [slice(None)] * lat.dim
            lo = [slice(None)] * lat.dim
            mid = [slice(None)] * lat.dim
            hi[axis], lo[axis], mid[axis] = slice(2, None), slice(None, -2), slice(1, -1)
            vals = (vals[tuple(hi)] - vals[tuple(lo)]) / (2 * h[axis])
            if mask is not None:
                mask = mask[tuple(hi)] & mask[tuple(lo)] & mask[tuple(mid)]
            shape[axis] -= 2
            lower[axis] += h[axis]
            upper[axis] -= h[axis]
    sub = Lattice(BoxDomain(tuple(lower), tuple(upper)), tuple(shape))
    return GridField(sub, vals, mask=mask)


def _derivative_fields(field: GridField, alphas, source: str) -> list[tuple[np.ndarray, Lattice, np.ndarray | None]]:
    if source not in ("exact", "finite-difference"):
        raise ValueError(f"derivative_source must be 'exact' or 'finite-difference', got {source!r}")
    out = []
    for alpha in alphas:
        if alpha.order == 0:
            out.append((field.values, field.lattice, field.mask))
        elif source == "exact":
            if tuple(alpha) not in field.derivatives:
                raise ValueError(f"exact derivative {tuple(alpha)} unavailable (d_avail={field.d_avail})")
            out.append((field.derivatives[tuple(alpha)], field.lattice, field.mask))
        else:
            fd = finite_difference(field, alpha)
            out.append((fd.values, fd.lattice, fd.mask))
    return out


# ---------------------------------------------------------------------------
# pair machinery

def _halfspace_offsets(shape):
    """Offset vectors v != 0 with first nonzero entry positive."""
    ranges = [range(-(m - 1), m) for m in shape]
    for v in itertools.product(*ranges):
        nz = next((c for c in v if c), 0)
        if nz > 0:
            yield v


def _offset_slices(v, shape):
    sa, sb = [], []
    for c, m in zip(v, shape):
        if c >= 0:
            sa.append(slice(0, m - c))
            sb.append(slice(c, m))
        else:
            sa.append(slice(-c, m))
            sb.append(slice(0, m + c))
    return tuple(sa), tuple(sb)


def _max_ratio(arr, lattice, gamma, mask, budget, seed) -> float:
    """Max of |f(x) - f(y)| / |x - y|^gamma over lattice pairs.

    Exhaustive when the pair count fits in ``budget``; otherwise every
    axis-aligned pair plus uniformly random pairs up to the budget.
    """
    shape = lattice.shape
    h = lattice.spacing
    n_pts = lattice.size
    total = n_pts * (n_pts - 1) // 2
    exhaustive = total <= budget or (lattice.dim == 1 and shape[0] <= EXHAUSTIVE_1D_MAX)
    if exhaustive:
        offsets = _halfspace_offsets(shape)
    else:
        offsets = (tuple(o if j == i else 0 for j in range(lattice.dim))
                   for i in range(lattice.dim) for o in range(1, shape[i]))
    best = 0.0
    n_used = 0
    for v in offsets:
        sa, sb = _offset_slices(v, shape)
        d = np.abs(arr[sb] - arr[sa])
        if mask is not None:
            d = np.where(mask[sb] & mask[sa], d, 0.0)
        n_used += d.size
        if d.size:
            best = max(best, float(d.max()) / float(np.linalg.norm(np.asarray(v) * h)) ** gamma)
    if not exhaustive and budget > n_used:
        rng = np.random.default_rng(seed)
        k = budget - n_used
        a = rng.integers(0, n_pts, size=k)
        b = rng.integers(0, n_pts, size=k)
        keep = a != b
        a, b = a[keep], b[keep]
        flat = arr.ravel()
        pa = np.stack(np.unravel_index(a, shape), axis=-1)
        pb = np.stack(np.unravel_index(b, shape), axis=-1)
        dist = np.linalg.norm((pa - pb) * h, axis=-1)
        d = np.abs(flat[a] - flat[b])
        if mask is not None:
            d = np.where(mask.ravel()[a] & mask.ravel()[b], d, 0.0)
        if d.size:
            best = max(best, float(np.max(d / dist**gamma)))
    return best


# ---------------------------------------------------------------------------
# norms

def holder_norm(field: GridField, t, derivative_source: str = "exact",
                pair_budget: int = DEFAULT_PAIR_BUDGET, seed: int = 0) -> float:
    """Lattice version of the C-bar^t norm.

    Sum over |alpha| <= floor(t) of max |d^alpha f|, plus, for fractional
    t, the sum over the same alphas of the largest difference quotient
    |d^alpha f(x) - d^alpha f(y)| / |x - y|^<t>. Maxima over lattice
    points and pairs make this a lower bound of the continuum norm.
    """
    t = _as_norm_spec(t)
    alphas = multi_indices(field.lattice.dim, t.integer_part)
    total = 0.0
    for arr, lat, mask in _derivative_fields(field, alphas, derivative_source):
        vals = np.abs(arr) if mask is None else np.abs(arr[mask])
        total += float(vals.max()) if vals.size else 0.0
    if t.fractional_part > 0:
        for arr, lat, mask in _derivative_fields(field, alphas, derivative_source):
            total += _max_ratio(arr, lat, t.fractional_part, mask, pair_budget, seed)
    return total


def _weights(lattice, mask):
    w = lattice.dual_cell_weights()
    return w if mask is None else np.where(mask, w, 0.0)


def gagliardo_sums(u: np.ndarray, lattice: Lattice, p: float, exponents, weights=None) -> np.ndarray:
    """Double sums sum_{x != y} w(x) w(y) |u(x) - u(y)|^p / |x - y|^e.

    ``u`` has shape ``(B, *lattice.shape)``; returns ``(B, len(exponents))``.
    Each offset is visited once and reused across exponents.
    """
    exps = np.asarray(list(exponents), float)
    w = lattice.dual_cell_weights() if weights is None else weights
    h = lattice.spacing
    out = np.zeros((u.shape[0], len(exps)))
    axes = tuple(range(1, u.ndim))
    for v in _halfspace_offsets(lattice.shape):
        sa, sb = _offset_slices(v, lattice.shape)
        ww = w[sa] * w[sb]
        s = np.sum(np.abs(u[(slice(None),) + sb] - u[(slice(None),) + sa]) ** p * ww, axis=axes)
        dist = float(np.linalg.norm(np.asarray(v) * h))
        out += 2.0 * s[:, None] * dist ** (-exps)[None, :]
    return out


def sobolev_norm_p(field: GridField, s, p: float, derivative_source: str = "exact") -> float:
    """p-th power of the W^s_p norm by product quadrature on dual cells.

    Integer s: sum of the L^p norms of all derivatives up to order s.
    Fractional s: L^p norm of the field plus the Gagliardo double integral of
    every order-floor(s) derivative, diagonal excluded.
    """
    s = _as_norm_spec(s)
    if not 1 < p < math.inf:
        raise ValueError(f"p must lie in (1, inf), got {p}")
    lat = field.lattice
    k, frac = s.integer_part, s.fractional_part
    if frac == 0:
        alphas = multi_indices(lat.dim, k)
    else:
        alphas = [MultiIndex((0,) * lat.dim)]
    total = 0.0
    for arr, dlat, mask in _derivative_fields(field, alphas, derivative_source):
        total += float(np.sum(_weights(dlat, mask) * np.abs(arr) ** p))
    if frac > 0:
        top = multi_indices(lat.dim, k, exact=True)
        for arr, dlat, mask in _derivative_fields(field, top, derivative_source):
            total += float(gagliardo_sums(arr[None], dlat, p, [dlat.dim + frac * p], _weights(dlat, mask))[0, 0])
    return total


# ---------------------------------------------------------------------------
# empirical Hölder exponent

@dataclass(frozen=True)
class HolderEstimate:
    slope: float | None
    se: float | None
    levels: tuple[int, ...]
    lags: tuple[float, ...]
    medians: tuple[float, ...]
    n_samples: int
    sites: str
    constant: bool = False

    def to_rows(self) -> list[dict]:
        return [{"level": k, "lag": h, "median_max_increment": med, "n_samples": self.n_samples}
                for k, h, med in zip(self.levels, self.lags, self.medians)]


def anchor_sites(lattice: Lattice, base_level: int) -> np.ndarray:
    """Multi-indices of the coarse dyadic grid at ``base_level``, shape ``(k, dim)``."""
    from .grid import level_offset

    steps = [level_offset(lattice, base_level, i) for i in range(lattice.dim)]
    grid = np.meshgrid(*[np.arange(0, m, st) for m, st in zip(lattice.shape, steps)], indexing="ij")
    return np.stack([g.ravel() for g in grid], axis=-1)


def anchored_indices(lattice: Lattice, levels) -> np.ndarray:
    """Flat indices read by the anchored max-increment estimator."""
    from .grid import level_offset

    levels = [int(k) for k in levels]
    anchors = anchor_sites(lattice, min(levels))
    out = [np.ravel_multi_index(tuple(anchors.T), lattice.shape)]
    for k in levels:
        for axis in range(lattice.dim):
            end = anchors.copy()
            end[:, axis] += level_offset(lattice, k, axis)
            end = end[end[:, axis] < lattice.shape[axis]]
            out.append(np.ravel_multi_index(tuple(end.T), lattice.shape))
    return np.unique(np.concatenate(out))


def max_increments(values: np.ndarray, lattice: Lattice, levels, mask=None, sites: str = "anchored") -> np.ndarray:
    """Per-sample maximum absolute axis increment at each dyadic level.

    ``values`` has shape ``(B, *lattice.shape)``; returns ``(B, len(levels))``
    with NaN where a level has no admissible pair. With ``sites="all"`` the
    maximum runs over every lattice position. With ``sites="anchored"`` it
    runs over increments starting at the points of the coarse dyadic grid of
    the smallest level, the same anchors at every level.
    """
    from .grid import level_offset

    if sites not in ("anchored", "all"):
        raise ValueError(f"sites must be 'anchored' or 'all', got {sites!r}")
    levels = [int(k) for k in levels]
    values = np.asarray(values, float)
    B = values.shape[0]
    shape = lattice.shape
    valid = np.ones(shape, bool) if mask is None else np.asarray(mask, bool).reshape(shape)
    out = np.full((B, len(levels)), np.nan)
    if sites == "anchored":
        anchors = anchor_sites(lattice, min(levels))
    flat = values.reshape(B, -1)
    for j, k in enumerate(levels):
        best = None
        for axis in range(lattice.dim):
            o = level_offset(lattice, k, axis)
            if sites == "all":
                hi = [slice(None)] * lattice.dim
                lo = [slice(None)] * lattice.dim
                hi[axis], lo[axis] = slice(o, None), slice(0, shape[axis] - o)
                ok = valid[tuple(hi)] & valid[tuple(lo)]
                if not ok.any():
                    continue
                d = np.abs(values[(slice(None),) + tuple(hi)] - values[(slice(None),) + tuple(lo)])
                m = np.max(d[:, ok], axis=1)
            else:
                end = anchors.copy()
                end[:, axis] += o
                inside = end[:, axis] < shape[axis]
                a_idx = np.ravel_multi_index(tuple(anchors[inside].T), shape)
                b_idx = np.ravel_multi_index(tuple(end[inside].T), shape)
                ok = valid.ravel()[a_idx] & valid.ravel()[b_idx]
                if not ok.any():
                    continue
                m = np.max(np.abs(flat[:, b_idx[ok]] - flat[:, a_idx[ok]]), axis=1)
            best = m if best is None else np.maximum(best, m)
        if best is not None:
            out[:, j] = best
    return out


def fit_holder_slope(table: np.ndarray, levels, lattice: Lattice, sites: str = "anchored") -> HolderEstimate:
    """Regress log(median over samples of max increment) on log(lag)."""
    levels = [int(k) for k in levels]
    side = float(lattice.domain.sides[0])
    lags = np.array([side * 2.0**-k for k in levels])
    have = ~np.all(np.isnan(table), axis=0)
    B = table.shape[0]
    if np.nanmax(np.abs(table), initial=0.0) == 0.0:
        return HolderEstimate(None, None, tuple(levels), tuple(lags.tolist()),
                              tuple(0.0 for _ in levels), B, sites, constant=True)
    med = np.full(len(levels), np.nan)
    med[have] = np.nanmedian(table[:, have], axis=0)
    use = have & (med > 0)
    if use.sum() < 2:
        raise ValueError("fewer than two levels with nonzero median increments")
    x, y = np.log(lags[use]), np.log(med[use])
    slope, se = _ols_slope(x, y)
    return HolderEstimate(slope, se, tuple(levels), tuple(lags.tolist()), tuple(med.tolist()), B, sites)


def _ols_slope(x, y) -> tuple[float, float]:
    xc = x - x.mean()
    sxx = float(xc @ xc)
    slope = float(xc @ (y - y.mean())) / sxx
    resid = y - y.mean() - slope * xc
    dof = len(x) - 2
    se = math.sqrt(float(resid @ resid) / dof / sxx) if dof > 0 else 0.0
    return slope, se


def holder_exponent_estimate(fields, max_level: int, min_level: int = 2, sites: str = "anchored",
                             alpha=None, min_samples: int = 20) -> HolderEstimate:
    """Empirical Hölder exponent of a family of sample fields on a common lattice.

    For each level k = min_level..max_level take the median over samples of
    the maximum absolute increment at lag 2^-k (times the box side) and
    return the least-squares slope of its logarithm against log(lag).
    A family whose increments all vanish is reported as ``constant``.
    """
    fields = list(fields)
    if len(fields) < min_samples:
        raise ValueError(f"need at least {min_samples} sample fields, got {len(fields)}")
    lattice = fields[0].lattice
    if any(f.lattice != lattice for f in fields):
        raise ValueError("all fields must share one lattice")
    key = None if alpha is None else tuple(alpha)
    stack = np.stack([f.values if key is None else f.derivative(key) for f in fields])
    levels = list(range(min_level, max_level + 1))
    table = max_increments(stack, lattice, levels, fields[0].mask, sites)
    return fit_holder_slope(table, levels, lattice, sites)


# ---------------------------------------------------------------------------
# embedding ratio catalog

@dataclass(frozen=True)
class EmbeddingRow:
    k: int
    holder: float
    sobolev: float
    ratio: float


def check_embedding_exponents(t: float, s: float, p: float, n: int):
    """Reject (t, s, p) outside the W^s_p -> C-bar^t embedding range."""
    edge = t + n / p
    if s < edge - 1e-12:
        raise ValueError(f"embedding needs s > t + n/p = {edge:g}, got s = {s:g}")
    if abs(s - edge) <= 1e-12 and float(t).is_integer():
        raise ValueError(f"s = t + n/p = {edge:g} is admissible only for non-integer t")


def sinusoid_field(k: int, lattice: Lattice, order: int = 2) -> GridField:
    """f_k(x) = sin(2 pi k x) on a 1D lattice with exact derivatives; k = 0 gives f = 1."""
    x = lattice.axis(0)
    if k == 0:
        derivs = {(j,): (np.ones_like(x) if j == 0 else np.zeros_like(x)) for j in range(order + 1)}
    else:
        w = 2 * math.pi * k
        derivs = {(j,): w**j * np.sin(w * x + j * math.pi / 2) for j in range(order + 1)}
    return GridField(lattice, derivs[(0,)], derivs)


def embedding_ratio_table(t: float, s: float, p: float, k_max: int, points_per_axis: int = 1025,
                          include_constant: bool = True) -> list[EmbeddingRow]:
    """Holder norm over Sobolev norm for sin(2 pi k x) on [0, 1], k = 1..k_max.

    ``include_constant`` prepends the row k = 0 for the constant function 1.
    """
    check_embedding_exponents(t, s, p, 1)
    lattice = Lattice(BoxDomain((0.0,), (1.0,)), (points_per_axis,))
    order = max(math.floor(t), math.floor(s))
    rows = []
    for k in range(0 if include_constant else 1, k_max + 1):
        f = sinusoid_field(k, lattice, order)
        h = holder_norm(f, t)
        sob = sobolev_norm_p(f, s, p) ** (1.0 / p)
        rows.append(EmbeddingRow(k, h, sob, h / sob if sob > 0 else math.inf))
    return rows


def embedding_ratio_bounded(rows: Sequence[EmbeddingRow], factor: float = 10.0) -> bool:
    ref = next(r.ratio for r in rows if r.k == 1)
    return all(r.ratio <= factor * ref for r in rows if r.k >= 1)
