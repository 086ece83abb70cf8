"""Box domains, regular lattices on them, dyadic pair designs and covering numbers."""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import fftconvolve


@dataclass(frozen=True)
class BoxDomain:
    lower: tuple[float, ...]
    upper: tuple[float, ...]

    def __post_init__(self):
        lower = tuple(float(v) for v in np.atleast_1d(self.lower))
        upper = tuple(float(v) for v in np.atleast_1d(self.upper))
        if len(lower) == 0 or len(lower) != len(upper):
            raise ValueError(f"lower/upper must be nonempty and of equal length, got {lower} and {upper}")
        if any(u <= l for l, u in zip(lower, upper)):
            raise ValueError(f"upper must exceed lower componentwise, got {lower} and {upper}")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @classmethod
    def unit(cls, dim: int) -> "BoxDomain":
        return cls((0.0,) * dim, (1.0,) * dim)

    @property
    def dim(self) -> int:
        return len(self.lower)

    @property
    def sides(self) -> np.ndarray:
        return np.asarray(self.upper) - np.asarray(self.lower)

    @property
    def volume(self) -> float:
        return float(np.prod(self.sides))


@dataclass(frozen=True)
class Lattice:
    """Regular lattice on a closed box.

    ``shape`` holds the point count per axis. Lattices built by
    :func:`make_lattice` have the same count on every axis; finite-difference
    outputs may shrink individual axes.
    """

    domain: BoxDomain
    shape: tuple[int, ...]

    def __post_init__(self):
        shape = tuple(int(s) for s in self.shape)
        if len(shape) != self.domain.dim:
            raise ValueError(f"shape {shape} does not match domain dimension {self.domain.dim}")
        if any(s < 2 for s in shape):
            raise ValueError(f"need at least 2 points per axis, got {shape}")
        object.__setattr__(self, "shape", shape)

    @property
    def dim(self) -> int:
        return self.domain.dim

    @property
    def points_per_axis(self) -> int:
        if len(set(self.shape)) != 1:
            raise ValueError(f"lattice has unequal axis counts {self.shape}")
        return self.shape[0]

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @property
    def spacing(self) -> np.ndarray:
        return self.domain.sides / (np.asarray(self.shape) - 1)

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    def axis(self, i: int) -> np.ndarray:
        k = np.arange(self.shape[i])
        x = self.domain.lower[i] + k * self.spacing[i]
        x[-1] = self.domain.upper[i]
        return x

    def point(self, index) -> np.ndarray:
        index = np.atleast_1d(np.asarray(index))
        return np.asarray(self.domain.lower) + index * self.spacing

    def points(self) -> np.ndarray:
        """All lattice points, row-major, shape ``(size, dim)``."""
        grids = np.meshgrid(*[self.axis(i) for i in range(self.dim)], indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=-1)

    def mesh(self) -> list[np.ndarray]:
        return np.meshgrid(*[self.axis(i) for i in range(self.dim)], indexing="ij")

    def dual_cell_weights(self) -> np.ndarray:
        """Volume of the node-centred cell of every point, clipped to the box.

        Interior nodes own a full cell; nodes on a face own half of it. The
        weights sum to the box volume.
        """
        w = np.ones(self.shape)
        for i, m in enumerate(self.shape):
            wi = np.full(m, self.spacing[i])
            wi[0] = wi[-1] = 0.5 * self.spacing[i]
            w = w * wi.reshape([-1 if j == i else 1 for j in range(self.dim)])
        return w

    def to_dict(self) -> dict:
        return {"lower": list(self.domain.lower), "upper": list(self.domain.upper), "shape": list(self.shape)}

    @classmethod
    def from_dict(cls, d: dict) -> "Lattice":
        return cls(BoxDomain(tuple(d["lower"]), tuple(d["upper"])), tuple(d["shape"]))


def make_lattice(domain: BoxDomain, points_per_axis: int) -> Lattice:
    if points_per_axis < 2:
        raise ValueError(f"points_per_axis must be >= 2, got {points_per_axis}")
    return Lattice(domain, (int(points_per_axis),) * domain.dim)


@dataclass(frozen=True)
class PointPairSet:
    """Pairs of lattice points, stored as flat (row-major) index arrays."""

    lattice: Lattice
    a: np.ndarray
    b: np.ndarray
    lags: np.ndarray
    levels: np.ndarray = field(default=None)

    def __post_init__(self):
        a = np.asarray(self.a, dtype=np.int64)
        b = np.asarray(self.b, dtype=np.int64)
        lags = np.asarray(self.lags, dtype=float)
        levels = np.full(a.shape, -1, dtype=np.int64) if self.levels is None else np.asarray(self.levels, np.int64)
        if not (a.shape == b.shape == lags.shape == levels.shape) or a.ndim != 1:
            raise ValueError("pair arrays must be one-dimensional and of equal length")
        if np.any(a == b):
            raise ValueError("pairs must join distinct points")
        for name, arr in (("a", a), ("b", b), ("lags", lags), ("levels", levels)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def __len__(self) -> int:
        return len(self.a)

    @property
    def pairs(self) -> list[tuple[tuple[int, ...], tuple[int, ...]]]:
        ia = np.unravel_index(self.a, self.lattice.shape)
        ib = np.unravel_index(self.b, self.lattice.shape)
        return [(tuple(int(c[k]) for c in ia), tuple(int(c[k]) for c in ib)) for k in range(len(self))]

    def groups(self, rtol: float = 1e-12) -> list[tuple[float, np.ndarray]]:
        """Partition pair positions by lag; returns ``(lag, positions)`` sorted by lag."""
        if len(self) == 0:
            return []
        order = np.argsort(self.lags, kind="stable")
        lags = self.lags[order]
        breaks = np.flatnonzero(np.diff(lags) > rtol * lags[1:]) + 1
        return [(float(chunk_lags[0]), np.sort(chunk))
                for chunk, chunk_lags in zip(np.split(order, breaks), np.split(lags, breaks))]

    def restrict(self, valid: np.ndarray) -> "PointPairSet":
        """Keep only pairs whose endpoints are both flagged valid in a flat boolean mask."""
        valid = np.asarray(valid, bool).ravel()
        keep = valid[self.a] & valid[self.b]
        return PointPairSet(self.lattice, self.a[keep], self.b[keep], self.lags[keep], self.levels[keep])

    def to_dict(self) -> dict:
        return {
            "lattice": self.lattice.to_dict(),
            "a": self.a.tolist(),
            "b": self.b.tolist(),
            "lags": self.lags.tolist(),
            "levels": self.levels.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PointPairSet":
        return cls(Lattice.from_dict(d["lattice"]), d["a"], d["b"], d["lags"], d["levels"])


def _pair_lags(lattice: Lattice, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    pa = np.stack(np.unravel_index(a, lattice.shape), axis=-1)
    pb = np.stack(np.unravel_index(b, lattice.shape), axis=-1)
    return np.linalg.norm((pb - pa) * lattice.spacing, axis=-1)


def level_offset(lattice: Lattice, level: int, axis: int) -> int:
    """Index offset along ``axis`` realising lag ``2**-level`` times the box side."""
    span = lattice.shape[axis] - 1
    if level < 0 or span % (1 << level):
        raise ValueError(
            f"level {level} needs an offset of {span}/2^{level} spacings on axis {axis}, which is not an integer"
        )
    return span >> level


def dyadic_pairs(lattice: Lattice, levels, extra_random: int = 0, seed: int = 0) -> PointPairSet:
    """All axis-aligned pairs at dyadic lags, plus optional random non-axis pairs.

    For each level ``k`` and axis ``i`` every pair ``(x, x + o e_i)`` with
    ``o = (m_i - 1) / 2**k`` is included. With ``extra_random > 0`` and
    ``dim >= 2`` each level also receives that many pairs ``(x, x + o s)``
    where ``s`` is a random sign pattern in {-1, 0, 1}^n with at least two
    nonzero entries.
    """
    levels = [int(k) for k in levels]
    shape = lattice.shape
    idx = np.arange(lattice.size).reshape(shape)
    a_parts, b_parts, lvl_parts = [], [], []
    rng = np.random.default_rng(seed)
    for k in levels:
        offsets = [level_offset(lattice, k, i) for i in range(lattice.dim)]
        for i, o in enumerate(offsets):
            lo = [slice(None)] * lattice.dim
            hi = [slice(None)] * lattice.dim
            lo[i] = slice(0, shape[i] - o)
            hi[i] = slice(o, None)
            a_parts.append(idx[tuple(lo)].ravel())
            b_parts.append(idx[tuple(hi)].ravel())
            lvl_parts.append(np.full(a_parts[-1].size, k))
        if extra_random and lattice.dim >= 2:
            a, b = _random_diagonal_pairs(lattice, offsets, extra_random, rng)
            a_parts.append(a)
            b_parts.append(b)
            lvl_parts.append(np.full(a.size, k))
    if not a_parts:
        empty = np.zeros(0, np.int64)
        return PointPairSet(lattice, empty, empty, np.zeros(0), empty)
    a = np.concatenate(a_parts)
    b = np.concatenate(b_parts)
    return PointPairSet(lattice, a, b, _pair_lags(lattice, a, b), np.concatenate(lvl_parts))


def _random_diagonal_pairs(lattice, offsets, count, rng):
    n = lattice.dim
    a_out, b_out = [], []
    while sum(len(x) for x in a_out) < count:
        signs = rng.integers(-1, 2, size=(count, n))
        signs = signs[np.count_nonzero(signs, axis=1) >= 2]
        step = signs * np.asarray(offsets)
        start = np.stack([rng.integers(0, m, size=len(step)) for m in lattice.shape], axis=-1)
        end = start + step
        ok = np.all((end >= 0) & (end < np.asarray(lattice.shape)), axis=1)
        a_out.append(np.ravel_multi_index(tuple(start[ok].T), lattice.shape))
        b_out.append(np.ravel_multi_index(tuple(end[ok].T), lattice.shape))
    return np.concatenate(a_out)[:count], np.concatenate(b_out)[:count]


def _ball_stencil(spacing: np.ndarray, radius: float) -> np.ndarray:
    reach = np.floor(radius / spacing * (1 + 1e-9) + 1e-9).astype(int)
    offs = np.meshgrid(*[np.arange(-r, r + 1) for r in reach], indexing="ij")
    dist2 = sum((o * h) ** 2 for o, h in zip(offs, spacing))
    # closed balls; absorb rounding in lattice coordinates
    return dist2 <= (radius * (1 + 1e-9)) ** 2


def covering_number(lattice: Lattice, radius: float, mask: np.ndarray | None = None) -> int:
    """Size of a greedy cover of the lattice points by closed balls centred at lattice points.

    Greedy maximum coverage: repeatedly take the centre covering the most
    still-uncovered points (ties to the lowest flat index). The result
    upper-bounds the optimal cover size. ``mask`` restricts both the points
    to cover and the admissible centres.
    """
    if radius <= 0:
        raise ValueError(f"radius must be positive, got {radius}")
    valid = np.ones(lattice.shape, bool) if mask is None else np.asarray(mask, bool).reshape(lattice.shape)
    kernel = _ball_stencil(lattice.spacing, radius)
    reach = np.asarray(kernel.shape) // 2
    uncovered = valid.copy()
    gains = np.rint(fftconvolve(uncovered.astype(float), kernel.astype(float), mode="same")).astype(np.int64)
    heap = [(-int(g), int(i)) for i, g in enumerate(gains.ravel()) if valid.flat[i]]
    heapq.heapify(heap)
    remaining = int(uncovered.sum())
    count = 0

    def window(i):
        c = np.unravel_index(i, lattice.shape)
        lo = [max(ci - r, 0) for ci, r in zip(c, reach)]
        hi = [min(ci + r + 1, m) for ci, r, m in zip(c, reach, lattice.shape)]
        grid_sl = tuple(slice(a, b) for a, b in zip(lo, hi))
        ker_sl = tuple(slice(a - ci + r, b - ci + r) for a, b, ci, r in zip(lo, hi, c, reach))
        return grid_sl, kernel[ker_sl]

    while remaining:
        neg_gain, i = heapq.heappop(heap)
        grid_sl, ker = window(i)
        hit = uncovered[grid_sl] & ker
        gain = int(np.count_nonzero(hit))
        if gain != -neg_gain:
            heapq.heappush(heap, (-gain, i))
            continue
        uncovered[grid_sl] &= ~ker
        remaining -= gain
        count += 1
    return count


def entropy_slope(lattice: Lattice, levels) -> tuple[float, list[int]]:
    """Least-squares slope of log N(2^-k) against k log 2, with the counts."""
    levels = list(levels)
    counts = [covering_number(lattice, 2.0 ** -k) for k in levels]
    x = np.asarray(levels, float) * np.log(2.0)
    slope = np.polyfit(x, np.log(counts), 1)[0]
    return float(slope), counts


def subsample_pairs(pairs: PointPairSet, per_level: int, seed: int = 0) -> PointPairSet:
    """Keep at most ``per_level`` uniformly chosen pairs from each level."""
    rng = np.random.default_rng(seed)
    keep = []
    for k in np.unique(pairs.levels):
        pos = np.flatnonzero(pairs.levels == k)
        if len(pos) > per_level:
            pos = np.sort(rng.choice(pos, per_level, replace=False))
        keep.append(pos)
    keep = np.concatenate(keep) if keep else np.zeros(0, np.int64)
    return PointPairSet(pairs.lattice, pairs.a[keep], pairs.b[keep], pairs.lags[keep], pairs.levels[keep])
