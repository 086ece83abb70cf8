"""The sphere S^2 as a two-chart stereographic manifold.

Charts, transition maps, a C-infinity partition of unity, pullbacks of
sphere fields to chart coordinates, the patching operator
Y = sum_i psi_i * (Y^i o phi_i), and per-chart regularity verification.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .engine import MCConfig, RegularityReport, verify_source
from .grid import BoxDomain, Lattice, PointPairSet, dyadic_pairs, make_lattice, subsample_pairs
from .norms import anchored_indices
from .samplers import FieldSpec, GridField, SphereField, real_sph_harm, sphere_coefficients


@dataclass(frozen=True)
class Chart:
    """Stereographic chart centred on the pole ``(0, 0, sign)``.

    Projection from the opposite pole: ``u = (x1, x2) / (1 + sign * x3)``.
    The domain leaves out the closed cap of angular radius ``cap_angle``
    around the opposite pole, so the image is the open disk of radius
    ``cot(cap_angle / 2)``.
    """

    name: str
    sign: int
    cap_angle: float

    @property
    def image_radius(self) -> float:
        return 1.0 / math.tan(0.5 * self.cap_angle)

    def domain_test(self, x) -> np.ndarray:
        x = np.asarray(x, float)
        return self.sign * x[..., 2] > -math.cos(self.cap_angle)

    def in_image(self, u) -> np.ndarray:
        u = np.asarray(u, float)
        return np.hypot(u[..., 0], u[..., 1]) < self.image_radius

    def forward(self, x) -> np.ndarray:
        x = np.asarray(x, float)
        denom = 1.0 + self.sign * x[..., 2]
        return np.stack([x[..., 0] / denom, x[..., 1] / denom], axis=-1)

    def inverse(self, u) -> np.ndarray:
        u = np.asarray(u, float)
        r2 = u[..., 0] ** 2 + u[..., 1] ** 2
        denom = 1.0 + r2
        return np.stack([2 * u[..., 0] / denom, 2 * u[..., 1] / denom, self.sign * (1.0 - r2) / denom], axis=-1)

    def bounding_box(self) -> BoxDomain:
        r = self.image_radius
        return BoxDomain((-r, -r), (r, r))


@dataclass(frozen=True)
class Atlas:
    charts: tuple[Chart, ...]

    @property
    def cap_angle(self) -> float:
        return self.charts[0].cap_angle

    def __getitem__(self, name: str) -> Chart:
        for c in self.charts:
            if c.name == name:
                return c
        raise KeyError(name)

    def covering(self, x) -> np.ndarray:
        """Boolean ``(len(charts), ...)`` membership table."""
        return np.stack([c.domain_test(x) for c in self.charts])

    def transition(self, i: int, j: int, v) -> np.ndarray:
        """phi_i o phi_j^{-1} on phi_j(U_i cap U_j)."""
        x = self.charts[j].inverse(v)
        if not np.all(self.charts[i].domain_test(x)):
            raise ValueError("transition evaluated outside the chart overlap")
        return self.charts[i].forward(x)

    def overlap_band(self) -> float:
        """Half-width in z of the band U_N cap U_S."""
        return math.cos(self.cap_angle)


def stereographic_atlas(cap_angle: float) -> Atlas:
    if not 0 < cap_angle < math.pi / 2:
        raise ValueError(f"cap_angle must lie in (0, pi/2), got {cap_angle}")
    return Atlas((Chart("north", 1, cap_angle), Chart("south", -1, cap_angle)))


def stereo_inversion(v) -> np.ndarray:
    """Closed-form transition between the two stereographic charts: v / |v|^2."""
    v = np.asarray(v, float)
    return v / np.sum(v * v, axis=-1, keepdims=True)


def jacobian_det(fn: Callable, v, h: float = 1e-6) -> np.ndarray:
    """Central finite-difference Jacobian determinant of a map R^2 -> R^2."""
    v = np.asarray(v, float)
    e0 = np.array([h, 0.0])
    e1 = np.array([0.0, h])
    d0 = (fn(v + e0) - fn(v - e0)) / (2 * h)
    d1 = (fn(v + e1) - fn(v - e1)) / (2 * h)
    return d0[..., 0] * d1[..., 1] - d0[..., 1] * d1[..., 0]


# ---------------------------------------------------------------------------
# partition of unity

def _smooth_step(t):
    """C-infinity step: 0 for t <= 0, 1 for t >= 1, built from exp(-1/t)."""
    t = np.asarray(t, float)
    with np.errstate(divide="ignore", over="ignore"):
        a = np.where(t > 0, np.exp(-1.0 / np.where(t > 0, t, 1.0)), 0.0)
        b = np.where(t < 1, np.exp(-1.0 / np.where(t < 1, 1.0 - t, 1.0)), 0.0)
    return a / (a + b)


@dataclass(frozen=True)
class BumpPartition:
    """Weights psi_i(x) = step((sign_i z + w) / 2w) with transition width w."""

    atlas: Atlas
    transition_width: float

    def weight(self, i: int, x) -> np.ndarray:
        x = np.asarray(x, float)
        w = self.transition_width
        return _smooth_step((self.atlas.charts[i].sign * x[..., 2] + w) / (2 * w))

    def weights(self, x) -> np.ndarray:
        return np.stack([self.weight(i, x) for i in range(len(self.atlas.charts))])


def bump_partition(atlas: Atlas, transition_width: float) -> BumpPartition:
    band = atlas.overlap_band()
    if not 0 < transition_width < band:
        raise ValueError(f"transition_width must lie in (0, {band:.6g}) for cap_angle={atlas.cap_angle}")
    return BumpPartition(atlas, transition_width)


def uniform_sphere_points(count: int, seed: int = 0) -> np.ndarray:
    x = np.random.default_rng(seed).standard_normal((count, 3))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


# ---------------------------------------------------------------------------
# pullbacks and patching

def chart_lattice(chart: Chart, points_per_axis: int) -> Lattice:
    return make_lattice(chart.bounding_box(), points_per_axis)


def _check_chart_lattice(chart: Chart, lattice: Lattice):
    box = chart.bounding_box()
    if lattice.dim != 2 or not np.allclose(lattice.domain.lower, box.lower, rtol=1e-12, atol=1e-12) \
            or not np.allclose(lattice.domain.upper, box.upper, rtol=1e-12, atol=1e-12):
        raise ValueError(f"lattice box {lattice.domain} is not the bounding box of chart {chart.name!r}")


def pullback(sphere_field: SphereField, chart: Chart, lattice: Lattice) -> GridField:
    """X o phi^{-1} on the chart's bounding-box lattice.

    Points outside the image disk are masked out. Their values still hold X
    at the inverse-projected point, which keeps bilinear interpolation
    accurate up to the disk edge.
    """
    _check_chart_lattice(chart, lattice)
    pts = lattice.points()
    values = sphere_field(chart.inverse(pts)).reshape(lattice.shape)
    return GridField(lattice, values, mask=chart.in_image(pts).reshape(lattice.shape))


class GridFunction:
    """Bilinear interpolant of a chart-lattice field, callable on ``(..., 2)`` arrays."""

    def __init__(self, grid_field: GridField):
        lat = grid_field.lattice
        self.field = grid_field
        self._interp = RegularGridInterpolator((lat.axis(0), lat.axis(1)), np.asarray(grid_field.values),
                                               method="linear", bounds_error=True)

    def __call__(self, u) -> np.ndarray:
        u = np.asarray(u, float)
        return self._interp(u.reshape(-1, 2)).reshape(u.shape[:-1])


def exact_pullback(sphere_field: SphereField, chart: Chart) -> Callable:
    """Analytic chart function u -> X(phi^{-1}(u))."""
    return lambda u: sphere_field(chart.inverse(u))


@dataclass(frozen=True)
class PatchedField:
    per_chart: tuple
    partition: BumpPartition
    atlas: Atlas

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, float)
        flat = x.reshape(-1, 3)
        total = np.zeros(len(flat))
        covered = np.zeros(len(flat), bool)
        for i, (chart, fn) in enumerate(zip(self.atlas.charts, self.per_chart)):
            psi = self.partition.weight(i, flat)
            active = (psi > 0) & chart.domain_test(flat)
            covered |= chart.domain_test(flat)
            if active.any():
                total[active] += psi[active] * fn(chart.forward(flat[active]))
        if not covered.all():
            raise ValueError("point not covered by any chart of the atlas")
        return total.reshape(x.shape[:-1])

    def active_values(self, x) -> list[np.ndarray]:
        """Per-chart values Y^i(phi_i(x)) where psi_i(x) > 0 (NaN elsewhere)."""
        flat = np.asarray(x, float).reshape(-1, 3)
        out = []
        for i, (chart, fn) in enumerate(zip(self.atlas.charts, self.per_chart)):
            active = (self.partition.weight(i, flat) > 0) & chart.domain_test(flat)
            vals = np.full(len(flat), np.nan)
            if active.any():
                vals[active] = fn(chart.forward(flat[active]))
            out.append(vals)
        return out


def patch(per_chart: Sequence[Callable], partition: BumpPartition, atlas: Atlas) -> PatchedField:
    if len(per_chart) != len(atlas.charts):
        raise ValueError("need one chart function per chart")
    fns = tuple(GridFunction(f) if isinstance(f, GridField) else f for f in per_chart)
    return PatchedField(fns, partition, atlas)


# ---------------------------------------------------------------------------
# per-chart regularity

class ChartSampler:
    """Draws pullbacks of an isotropic sphere field onto one chart lattice.

    The real spherical-harmonic basis is tabulated once at the lattice
    points that will be read (``needed``, default every unmasked point);
    each replicate is then a matrix product. Unread points hold zero.
    """

    d_avail = 0

    def __init__(self, spec: FieldSpec, chart: Chart, lattice: Lattice, needed=None):
        _check_chart_lattice(chart, lattice)
        self.spec = spec
        self.chart = chart
        self.lattice = lattice
        pts = lattice.points()
        self.mask = chart.in_image(pts).reshape(lattice.shape)
        live = np.flatnonzero(self.mask.ravel())
        if needed is not None:
            live = np.intersect1d(live, np.asarray(needed, np.int64))
        self._live = live
        self._basis = real_sph_harm(spec.band_limit, chart.inverse(pts[live]))

    def draw(self, rngs) -> dict:
        coeffs = sphere_coefficients(self.spec, rngs)
        out = np.zeros((len(rngs), self.lattice.size))
        out[:, self._live] = coeffs @ self._basis.T
        return {(0, 0): out.reshape((len(rngs),) + self.lattice.shape)}


def chart_pairs(chart: Chart, lattice: Lattice, levels, per_level: int, seed: int = 0) -> PointPairSet:
    """Axis pairs at dyadic lags inside the image disk, subsampled per level."""
    mask = chart.in_image(lattice.points())
    return subsample_pairs(dyadic_pairs(lattice, levels).restrict(mask), per_level, seed)


@dataclass
class ChartwiseResult:
    reports: dict[str, RegularityReport]
    t_star_discrepancy: float | None
    epsilon_z: dict[float, float | None]
    agreement_sigmas: float = 3.0
    notes: list[str] = field(default_factory=list)
    structure: dict = field(default_factory=dict, repr=False)

    @property
    def verdict(self) -> str:
        verdicts = {r.verdict for r in self.reports.values()}
        if verdicts == {"constant"}:
            return "constant"
        return "pass" if verdicts <= {"pass", "constant"} else "fail"

    @property
    def consistent(self) -> bool:
        z_ok = all(z is None or z <= self.agreement_sigmas for z in self.epsilon_z.values())
        return z_ok and (self.t_star_discrepancy is None or self.t_star_discrepancy <= 0.1)

    @property
    def degenerate(self) -> bool:
        return all(r.verdict == "constant" for r in self.reports.values())

    def to_dict(self) -> dict:
        return {
            "verdict": self.verdict,
            "charts": [r.to_dict() for r in self.reports.values()],
            "t_star_discrepancy": self.t_star_discrepancy,
            "epsilon_z": [{"p": p, "z": z} for p, z in self.epsilon_z.items()],
            "agreement_sigmas": self.agreement_sigmas,
            "consistent": self.consistent,
            "notes": self.notes,
        }


def chartwise_regularity(spec: FieldSpec, atlas: Atlas, d: int, p_grid, mc_config: MCConfig,
                         points_per_axis: int | None = None, pairs_per_level: int = 4000) -> ChartwiseResult:
    """Run the regularity pipeline on the pullback of ``spec`` to every chart.

    Both charts see the same sphere samples (same master seed). Lags are
    measured in chart coordinates and pairs are restricted to the image disk
    and subsampled to ``pairs_per_level`` per level, so only the points read
    by the estimators are ever evaluated.
    """
    if spec.kind != "SphereIsotropic":
        raise ValueError(f"chartwise regularity needs a SphereIsotropic spec, got {spec.kind}")
    if d != 0:
        raise ValueError("chart pullbacks carry no exact derivatives; only d = 0 is supported")
    m = points_per_axis or mc_config.points_per_axis
    reports, structure = {}, {}
    for chart in atlas.charts:
        lattice = chart_lattice(chart, m)
        pairs = chart_pairs(chart, lattice, mc_config.levels, pairs_per_level, mc_config.master_seed)
        needed = None
        if mc_config.sites == "anchored":
            needed = np.union1d(np.union1d(pairs.a, pairs.b), anchored_indices(lattice, mc_config.levels))
        source = ChartSampler(spec, chart, lattice, needed)
        report, data, _ = verify_source(source, spec.to_dict(), 2, d, p_grid, mc_config, pairs=pairs,
                                        chart=chart.name)
        structure[chart.name] = data
        del source
        reports[chart.name] = report
    north, south = reports[atlas.charts[0].name], reports[atlas.charts[1].name]
    disc = None
    if north.t_star is not None and south.t_star is not None:
        disc = abs(north.t_star - south.t_star)
    z = {}
    for rn, rs in zip(north.per_p, south.per_p):
        if rn.epsilon_hat is None or rs.epsilon_hat is None:
            z[rn.p] = None
            continue
        joint = math.hypot(rn.epsilon_se or 0.0, rs.epsilon_se or 0.0)
        z[rn.p] = abs(rn.epsilon_hat - rs.epsilon_hat) / joint if joint > 0 else 0.0
    notes = ["regularity checked on the two fixed stereographic charts only",
             "per-chart intercepts (log C) are reported without any cross-chart relation"]
    return ChartwiseResult(reports, disc, z, notes=notes, structure=structure)
