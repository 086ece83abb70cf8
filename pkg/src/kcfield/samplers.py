"""Seeded exact samplers for Gaussian random fields on lattices and on the sphere."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, fields
from typing import Callable, Sequence

import numpy as np
from scipy import linalg
from scipy.special import eval_legendre, gammaln

from .grid import BoxDomain, Lattice

KINDS = ("BrownianMotion", "FractionalBM", "IntegratedBM", "BrownianSheet", "CovarianceField", "SphereIsotropic")
MAX_BAND_LIMIT = 64
JITTERS = (1e-12, 1e-11, 1e-10, 1e-9, 1e-8)
_SEED_MASK = (1 << 64) - 1


class CholeskyError(np.linalg.LinAlgError):
    """Covariance matrix stayed non-positive-definite after jitter escalation."""


def replicate_seed(master_seed: int, index: int) -> np.random.SeedSequence:
    """Counter-based seed for replicate ``index``; independent of scheduling."""
    return np.random.SeedSequence((int(master_seed) & _SEED_MASK, int(index)))


def replicate_rng(master_seed: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(replicate_seed(master_seed, index)))


# ---------------------------------------------------------------------------
# field specifications

def _fbm_cov(x, y, spec):
    h2 = 2 * spec.hurst
    nx = np.linalg.norm(x, axis=-1)[:, None]
    ny = np.linalg.norm(y, axis=-1)[None, :]
    r = np.linalg.norm(x[:, None, :] - y[None, :, :], axis=-1)
    return spec.variance * 0.5 * (nx**h2 + ny**h2 - r**h2)


def _exp_cov(x, y, spec):
    r = np.linalg.norm(x[:, None, :] - y[None, :, :], axis=-1)
    return spec.variance * np.exp(-r / spec.length_scale)


def _gauss_cov(x, y, spec):
    r2 = np.sum((x[:, None, :] - y[None, :, :]) ** 2, axis=-1)
    return spec.variance * np.exp(-0.5 * r2 / spec.length_scale**2)


def _const_cov(x, y, spec):
    return np.full((len(x), len(y)), spec.variance)


def _zero_cov(x, y, spec):
    return np.zeros((len(x), len(y)))


COVARIANCES: dict[str, Callable] = {
    "fbm": _fbm_cov,
    "exponential": _exp_cov,
    "gaussian": _gauss_cov,
    "constant": _const_cov,
    "zero": _zero_cov,
}


@dataclass(frozen=True)
class FieldSpec:
    """Declarative description of a Gaussian random field family.

    Only the parameters relevant to ``kind`` are used; :meth:`to_dict` drops
    the others.
    """

    kind: str
    dim: int = 1
    horizon: float = 1.0
    hurst: float = 0.5
    covariance: str = ""
    variance: float = 1.0
    length_scale: float = 1.0
    spectrum: tuple[float, ...] = ()

    _PARAMS = {
        "BrownianMotion": ("horizon",),
        "FractionalBM": ("hurst",),
        "IntegratedBM": (),
        "BrownianSheet": (),
        "CovarianceField": ("dim", "covariance", "variance", "length_scale", "hurst"),
        "SphereIsotropic": ("spectrum",),
    }

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown field kind {self.kind!r}; expected one of {KINDS}")
        object.__setattr__(self, "spectrum", tuple(float(a) for a in self.spectrum))
        if self.kind in ("BrownianMotion", "FractionalBM", "IntegratedBM"):
            object.__setattr__(self, "dim", 1)
        elif self.kind in ("BrownianSheet", "SphereIsotropic"):
            object.__setattr__(self, "dim", 2)
        if self.kind == "FractionalBM" and not 0 < self.hurst < 1:
            raise ValueError(f"hurst must lie in (0, 1), got {self.hurst}")
        if self.kind == "BrownianMotion" and self.horizon <= 0:
            raise ValueError(f"horizon must be positive, got {self.horizon}")
        if self.kind == "CovarianceField":
            if self.covariance not in COVARIANCES:
                raise ValueError(f"unknown covariance {self.covariance!r}; expected one of {sorted(COVARIANCES)}")
            if self.dim < 1:
                raise ValueError(f"dim must be >= 1, got {self.dim}")
            if self.variance < 0 or self.length_scale <= 0:
                raise ValueError("variance must be >= 0 and length_scale > 0")
            if self.covariance == "fbm" and not 0 < self.hurst < 1:
                raise ValueError(f"hurst must lie in (0, 1), got {self.hurst}")
        if self.kind == "SphereIsotropic":
            if not self.spectrum:
                raise ValueError("spectrum needs at least A_0")
            if any(a < 0 for a in self.spectrum):
                raise ValueError(f"power spectrum must be nonnegative, got {self.spectrum}")
            if self.band_limit > MAX_BAND_LIMIT:
                raise ValueError(f"band limit {self.band_limit} exceeds {MAX_BAND_LIMIT}")

    @property
    def d_avail(self) -> int:
        return 1 if self.kind == "IntegratedBM" else 0

    @property
    def band_limit(self) -> int:
        return len(self.spectrum) - 1

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "dim": self.dim}
        for name in self._PARAMS[self.kind]:
            value = getattr(self, name)
            out[name] = list(value) if isinstance(value, tuple) else value
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "FieldSpec":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown field-spec keys: {sorted(unknown)}")
        return cls(**d)


def brownian_motion(horizon: float = 1.0) -> FieldSpec:
    return FieldSpec("BrownianMotion", horizon=horizon)


def fractional_bm(hurst: float) -> FieldSpec:
    return FieldSpec("FractionalBM", hurst=hurst)


def integrated_bm() -> FieldSpec:
    return FieldSpec("IntegratedBM")


def brownian_sheet() -> FieldSpec:
    return FieldSpec("BrownianSheet")


def covariance_field(covariance: str, dim: int = 1, **params) -> FieldSpec:
    return FieldSpec("CovarianceField", dim=dim, covariance=covariance, **params)


def sphere_isotropic(spectrum: Sequence[float]) -> FieldSpec:
    return FieldSpec("SphereIsotropic", spectrum=tuple(spectrum))


def power_law_spectrum(decay: float, band_limit: int, scale: float = 1.0) -> tuple[float, ...]:
    """A_l = scale * (1 + l)^-decay for l = 0..band_limit."""
    return tuple(scale * (1.0 + l) ** -decay for l in range(band_limit + 1))


# ---------------------------------------------------------------------------
# lattice fields

def _freeze(arr):
    arr = np.ascontiguousarray(arr, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class GridField:
    lattice: Lattice
    values: np.ndarray
    derivatives: dict = field(default_factory=dict)
    mask: np.ndarray | None = None

    def __post_init__(self):
        values = _freeze(self.values)
        if values.shape != self.lattice.shape:
            raise ValueError(f"values shape {values.shape} does not match lattice {self.lattice.shape}")
        zero = (0,) * self.lattice.dim
        derivs = {tuple(int(a) for a in k): _freeze(v) for k, v in self.derivatives.items()}
        derivs[zero] = values
        for alpha, arr in derivs.items():
            if len(alpha) != self.lattice.dim or arr.shape != values.shape:
                raise ValueError(f"derivative {alpha} has wrong index length or shape")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "derivatives", derivs)
        if self.mask is not None:
            mask = np.asarray(self.mask, bool).reshape(self.lattice.shape).copy()
            mask.setflags(write=False)
            object.__setattr__(self, "mask", mask)

    @property
    def d_avail(self) -> int:
        return max(sum(a) for a in self.derivatives)

    def derivative(self, alpha) -> np.ndarray:
        alpha = tuple(int(a) for a in alpha)
        if alpha not in self.derivatives:
            raise KeyError(f"exact derivative {alpha} not available (d_avail={self.d_avail})")
        return self.derivatives[alpha]

    def scaled(self, c: float) -> "GridField":
        return GridField(self.lattice, c * self.values, {k: c * v for k, v in self.derivatives.items()}, self.mask)

    def to_csv(self) -> str:
        """Header lines (``# key,values``) followed by row-major value columns."""
        buf = io.StringIO()
        lat = self.lattice
        alphas = sorted(self.derivatives, key=lambda a: (sum(a), a))
        buf.write(f"# n,{lat.dim}\n")
        buf.write("# lower," + ",".join(repr(v) for v in lat.domain.lower) + "\n")
        buf.write("# upper," + ",".join(repr(v) for v in lat.domain.upper) + "\n")
        buf.write("# shape," + ",".join(str(s) for s in lat.shape) + "\n")
        buf.write(f"# d_avail,{self.d_avail}\n")
        cols = ["d" + "_".join(str(a) for a in alpha) for alpha in alphas]
        if self.mask is not None:
            cols.append("mask")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(cols)
        data = [self.derivatives[a].ravel() for a in alphas]
        if self.mask is not None:
            data.append(self.mask.ravel().astype(int))
        for row in zip(*data):
            w.writerow([repr(float(v)) for v in row[: len(alphas)]] + [int(v) for v in row[len(alphas):]])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "GridField":
        header, body = {}, []
        for line in text.splitlines():
            if line.startswith("#"):
                key, *vals = line[1:].strip().split(",")
                header[key] = vals
            elif line:
                body.append(line)
        lattice = Lattice(
            BoxDomain(tuple(map(float, header["lower"])), tuple(map(float, header["upper"]))),
            tuple(map(int, header["shape"])),
        )
        rows = list(csv.reader(body))
        cols, rows = rows[0], rows[1:]
        table = np.array(rows, dtype=float).reshape(len(rows), len(cols))
        derivs, mask = {}, None
        for j, name in enumerate(cols):
            if name == "mask":
                mask = table[:, j].astype(bool).reshape(lattice.shape)
            else:
                derivs[tuple(int(a) for a in name[1:].split("_"))] = table[:, j].reshape(lattice.shape)
        values = derivs.pop((0,) * lattice.dim)
        return cls(lattice, values, derivs, mask)


class LatticeSampler:
    """Exact sampler for one (spec, lattice) pair; factorisations are cached.

    ``draw`` maps a list of generators to a dict ``alpha -> (B, *shape)``
    array. Each row consumes only its own generator, so a replicate's value
    does not depend on which other replicates share its batch.
    """

    def __init__(self, spec: FieldSpec, lattice: Lattice, method: str = "auto"):
        if spec.kind == "SphereIsotropic":
            raise ValueError("SphereIsotropic fields live on S^2; use sample_sphere or a chart pullback")
        if lattice.dim != spec.dim:
            raise ValueError(f"lattice dimension {lattice.dim} does not match field dimension {spec.dim}")
        self.spec = spec
        self.lattice = lattice
        if spec.kind in ("BrownianMotion", "IntegratedBM", "BrownianSheet", "FractionalBM"):
            if min(lattice.domain.lower) < 0:
                raise ValueError(f"{spec.kind} is indexed by [0, inf); lattice starts at {lattice.domain.lower}")
        if spec.kind == "BrownianMotion" and lattice.domain.upper[0] > spec.horizon * (1 + 1e-12):
            raise ValueError(f"lattice exceeds the horizon {spec.horizon}")
        if spec.kind == "FractionalBM":
            if method == "auto":
                method = "davies-harte" if lattice.domain.lower[0] == 0 and lattice.size > 1025 else "cholesky"
            if method not in ("cholesky", "davies-harte"):
                raise ValueError(f"unknown fBm method {method!r}")
            if method == "davies-harte" and lattice.domain.lower[0] != 0:
                raise ValueError("Davies-Harte sampling needs a lattice starting at 0")
            self.method = method
            if method == "cholesky":
                self._factor = _factor(_fbm_cov(lattice.points(), lattice.points(), spec))
            else:
                self._sqrt_eigs = _davies_harte_eigs(spec.hurst, lattice.size - 1)
        elif spec.kind == "CovarianceField":
            self.method = spec.covariance
            if spec.covariance not in ("zero", "constant"):
                pts = lattice.points()
                self._factor = _factor(COVARIANCES[spec.covariance](pts, pts, spec))
        else:
            self.method = "increments"

    mask = None

    @property
    def d_avail(self) -> int:
        return self.spec.d_avail

    def draw(self, rngs: Sequence[np.random.Generator]) -> dict:
        kind = self.spec.kind
        lat = self.lattice
        if kind in ("BrownianMotion", "IntegratedBM"):
            bm = _bm_paths(lat.axis(0), rngs)
            if kind == "BrownianMotion":
                return {(0,): bm}
            x = lat.axis(0)
            integral = np.zeros_like(bm)
            integral[:, 1:] = np.cumsum(0.5 * (bm[:, 1:] + bm[:, :-1]) * np.diff(x), axis=1)
            return {(0,): integral, (1,): bm}
        if kind == "BrownianSheet":
            return {(0, 0): _sheet(lat.axis(0), lat.axis(1), rngs)}
        if kind == "FractionalBM" and self.method == "davies-harte":
            n = lat.size - 1
            size = len(self._sqrt_eigs)
            z = np.stack([g.standard_normal(size) + 1j * g.standard_normal(size) for g in rngs])
            fgn = np.fft.fft(self._sqrt_eigs * z, axis=1)[:, :n].real * lat.spacing[0] ** self.spec.hurst
            out = np.zeros((len(rngs), lat.size))
            out[:, 1:] = np.cumsum(fgn, axis=1)
            return {(0,): out}
        zero = (0,) * lat.dim
        if kind == "CovarianceField" and self.method == "zero":
            return {zero: np.zeros((len(rngs),) + lat.shape)}
        if kind == "CovarianceField" and self.method == "constant":
            level = math.sqrt(self.spec.variance) * np.array([g.standard_normal() for g in rngs])
            return {zero: np.broadcast_to(level.reshape((-1,) + (1,) * lat.dim), (len(rngs),) + lat.shape).copy()}
        return {zero: self._factor.apply(rngs).reshape((len(rngs),) + lat.shape)}


@dataclass
class _Factor:
    live: np.ndarray
    chol: np.ndarray
    size: int
    jitter: float

    def apply(self, rngs):
        z = np.stack([g.standard_normal(len(self.live)) for g in rngs])
        out = np.zeros((len(rngs), self.size))
        out[:, self.live] = z @ self.chol.T
        return out


def _factor(cov: np.ndarray) -> _Factor:
    """Lower Cholesky factor on the points with nonzero variance.

    Points whose variance is exactly zero are deterministic zeros and are
    left out of the factorisation. Jitter escalates 1e-12 .. 1e-8 relative
    to the mean variance.
    """
    diag = np.diag(cov)
    live = np.flatnonzero(diag > 0)
    sub = cov[np.ix_(live, live)]
    scale = float(diag[live].mean()) if len(live) else 0.0
    for jitter in (0.0,) + JITTERS:
        try:
            chol = linalg.cholesky(sub + jitter * scale * np.eye(len(live)), lower=True, check_finite=False)
        except linalg.LinAlgError:
            continue
        return _Factor(live, chol, len(diag), jitter)
    raise CholeskyError(f"covariance not positive semidefinite even with jitter {JITTERS[-1]}")


def _davies_harte_eigs(hurst: float, n: int) -> np.ndarray:
    k = np.arange(n + 1, dtype=float)
    h2 = 2 * hurst
    r = 0.5 * ((k + 1) ** h2 - 2 * k**h2 + np.abs(k - 1) ** h2)
    circ = np.concatenate([r, r[-2:0:-1]])
    eigs = np.fft.fft(circ).real
    if eigs.min() < -1e-10 * eigs.max():
        raise CholeskyError("circulant embedding is not nonnegative definite")
    return np.sqrt(np.clip(eigs, 0, None) / len(circ))


def _bm_paths(x: np.ndarray, rngs) -> np.ndarray:
    steps = np.concatenate([[x[0]], np.diff(x)])
    z = np.stack([g.standard_normal(len(x)) for g in rngs])
    return np.cumsum(z * np.sqrt(steps), axis=1)


def _sheet(x: np.ndarray, y: np.ndarray, rngs) -> np.ndarray:
    dx = np.concatenate([[x[0]], np.diff(x)])
    dy = np.concatenate([[y[0]], np.diff(y)])
    area = np.sqrt(np.outer(dx, dy))
    z = np.stack([g.standard_normal(area.shape) for g in rngs])
    return np.cumsum(np.cumsum(z * area, axis=1), axis=2)


def sample(spec: FieldSpec, lattice: Lattice, seed: int, method: str = "auto") -> GridField:
    """One exact realisation of ``spec`` on ``lattice``; deterministic in ``seed``."""
    out = LatticeSampler(spec, lattice, method).draw([np.random.default_rng(seed)])
    zero = (0,) * lattice.dim
    return GridField(lattice, out.pop(zero)[0], {k: v[0] for k, v in out.items()})


# ---------------------------------------------------------------------------
# sphere

def sh_index(l: int, m: int) -> int:
    return l * l + l + m


def real_sph_harm(band_limit: int, points: np.ndarray) -> np.ndarray:
    """Orthonormal real spherical harmonics at unit vectors, shape ``(k, (L+1)^2)``.

    Column ``l*l + l + m`` holds Y_lm; m > 0 uses sqrt(2) N P_l^m cos(m phi),
    m < 0 the sine counterpart, without the Condon-Shortley phase. Built
    with the usual three-term recurrence on normalized Legendre functions.
    """
    pts = np.atleast_2d(np.asarray(points, float))
    L = int(band_limit)
    ct = np.clip(pts[:, 2], -1.0, 1.0)
    st = np.hypot(pts[:, 0], pts[:, 1])
    phi = np.arctan2(pts[:, 1], pts[:, 0])
    out = np.empty((len(pts), (L + 1) ** 2))
    qmm = np.full(len(pts), math.sqrt(1.0 / (4 * math.pi)))
    for m in range(L + 1):
        if m > 0:
            qmm = math.sqrt((2 * m + 1) / (2 * m)) * st * qmm
        if m == 0:
            cos_m, sin_m = 1.0, None
        else:
            cos_m, sin_m = math.sqrt(2.0) * np.cos(m * phi), math.sqrt(2.0) * np.sin(m * phi)
        q_prev, q = None, qmm
        for l in range(m, L + 1):
            if l == m + 1:
                q_prev, q = q, math.sqrt(2 * m + 3) * ct * qmm
            elif l > m + 1:
                a = math.sqrt((4 * l * l - 1) / (l * l - m * m))
                b = math.sqrt(((l - 1) ** 2 - m * m) / (4 * (l - 1) ** 2 - 1))
                q_prev, q = q, a * (ct * q - b * q_prev)
            out[:, sh_index(l, m)] = q * cos_m
            if m > 0:
                out[:, sh_index(l, -m)] = q * sin_m
    return out


_EVAL_CHUNK = 4096


@dataclass(frozen=True)
class SphereField:
    """Band-limited field sum_{l<=L, |m|<=l} a_lm Y_lm with a real basis."""

    coefficients: np.ndarray

    def __post_init__(self):
        coeffs = _freeze(self.coefficients)
        L = math.isqrt(len(coeffs)) - 1
        if coeffs.ndim != 1 or (L + 1) ** 2 != len(coeffs):
            raise ValueError("coefficient vector must have (L+1)^2 entries")
        object.__setattr__(self, "coefficients", coeffs)

    @property
    def band_limit(self) -> int:
        return math.isqrt(len(self.coefficients)) - 1

    def __call__(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, float)
        flat = pts.reshape(-1, 3)
        out = np.empty(len(flat))
        for start in range(0, len(flat), _EVAL_CHUNK):
            block = flat[start:start + _EVAL_CHUNK]
            out[start:start + len(block)] = real_sph_harm(self.band_limit, block) @ self.coefficients
        return out.reshape(pts.shape[:-1])

    evaluate = __call__

    def to_csv(self) -> str:
        lines = ["l,m,a"]
        for l in range(self.band_limit + 1):
            for m in range(-l, l + 1):
                lines.append(f"{l},{m},{float(self.coefficients[sh_index(l, m)])!r}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_csv(cls, text: str) -> "SphereField":
        rows = list(csv.DictReader(io.StringIO(text)))
        L = max(int(r["l"]) for r in rows)
        coeffs = np.zeros((L + 1) ** 2)
        for r in rows:
            coeffs[sh_index(int(r["l"]), int(r["m"]))] = float(r["a"])
        return cls(coeffs)


def sphere_coefficients(spec: FieldSpec, rngs: Sequence[np.random.Generator]) -> np.ndarray:
    """Coefficient draws for a batch of generators, shape ``(B, (L+1)^2)``."""
    if spec.kind != "SphereIsotropic":
        raise ValueError(f"expected a SphereIsotropic spec, got {spec.kind}")
    std = np.repeat(np.sqrt(spec.spectrum), [2 * l + 1 for l in range(spec.band_limit + 1)])
    return np.stack([std * g.standard_normal(len(std)) for g in rngs])


def sample_sphere(spec: FieldSpec, seed: int) -> SphereField:
    return SphereField(sphere_coefficients(spec, [np.random.default_rng(seed)])[0])


def sphere_covariance(spec: FieldSpec, cos_angle) -> np.ndarray:
    """Covariance of an isotropic field at angular separation ``arccos(cos_angle)``."""
    cos_angle = np.asarray(cos_angle, float)
    return sum(a * (2 * l + 1) / (4 * math.pi) * eval_legendre(l, cos_angle) for l, a in enumerate(spec.spectrum))


# ---------------------------------------------------------------------------
# closed-form increment moments

def gaussian_abs_moment(sigma: float, p: float) -> float:
    """E|N(0, sigma^2)|^p = sigma^p 2^(p/2) Gamma((p+1)/2) / sqrt(pi)."""
    if sigma == 0:
        return 0.0
    return math.exp(p * math.log(sigma) + 0.5 * p * math.log(2.0) + gammaln(0.5 * (p + 1)) - 0.5 * math.log(math.pi))


def increment_variance(spec: FieldSpec, x, y, alpha=None) -> float:
    """Var(d^alpha X(x) - d^alpha X(y)) for the Gaussian families."""
    x = np.atleast_1d(np.asarray(x, float))
    y = np.atleast_1d(np.asarray(y, float))
    order = 0 if alpha is None else int(sum(alpha))
    if order > spec.d_avail:
        raise ValueError(f"derivative order {order} unavailable for {spec.kind}")
    kind = spec.kind
    if kind == "BrownianMotion" or (kind == "IntegratedBM" and order == 1):
        return float(abs(x[0] - y[0]))
    if kind == "FractionalBM":
        return float(abs(x[0] - y[0]) ** (2 * spec.hurst))
    if kind == "IntegratedBM":
        s, t = sorted((float(x[0]), float(y[0])))
        # Cov(Y_s, Y_t) = s^2 t / 2 - s^3 / 6 for s <= t
        return t**3 / 3 + s**3 / 3 - 2 * (s * s * t / 2 - s**3 / 6)
    if kind == "BrownianSheet":
        return float(np.prod(x) + np.prod(y) - 2 * np.prod(np.minimum(x, y)))
    if kind == "CovarianceField":
        k = COVARIANCES[spec.covariance]
        pts = np.stack([x, y])
        c = k(pts, pts, spec)
        return float(max(c[0, 0] + c[1, 1] - 2 * c[0, 1], 0.0))
    if kind == "SphereIsotropic":
        cos_angle = float(np.dot(x, y) / (np.linalg.norm(x) * np.linalg.norm(y)))
        return float(2 * (sphere_covariance(spec, 1.0) - sphere_covariance(spec, cos_angle)))
    raise NotImplementedError(f"no closed-form increment variance for {kind}")


def exact_increment_moment(spec: FieldSpec, x, y, p: float, alpha=None) -> float:
    """E|d^alpha X(x) - d^alpha X(y)|^p for Gaussian ``spec``."""
    if p < 1:
        raise ValueError(f"p must be >= 1, got {p}")
    return gaussian_abs_moment(math.sqrt(increment_variance(spec, x, y, alpha)), p)
