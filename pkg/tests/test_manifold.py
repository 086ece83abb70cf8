import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from kcfield.engine import MCConfig
from kcfield.grid import BoxDomain, make_lattice
from kcfield.manifold import (GridFunction, bump_partition, chart_lattice, chartwise_regularity, exact_pullback,
                              jacobian_det, patch, pullback, stereo_inversion, stereographic_atlas,
                              uniform_sphere_points)
from kcfield.samplers import SphereField, power_law_spectrum, sample_sphere, sphere_isotropic

ATLAS = stereographic_atlas(math.pi / 3)
NORTH, SOUTH = ATLAS.charts
SMOOTH = sphere_isotropic(power_law_spectrum(4, 32))


def overlap_points(count, seed=0):
    x = uniform_sphere_points(4 * count, seed)
    both = NORTH.domain_test(x) & SOUTH.domain_test(x)
    return x[both][:count]


def test_atlas_range():
    for bad in (0.0, math.pi / 2, -1.0):
        with pytest.raises(ValueError):
            stereographic_atlas(bad)


def test_equator_in_both_charts_and_poles_excluded():
    e = np.array([1.0, 0.0, 0.0])
    assert NORTH.domain_test(e) and SOUTH.domain_test(e)
    assert not NORTH.domain_test(np.array([0.0, 0.0, -1.0]))
    assert not SOUTH.domain_test(np.array([0.0, 0.0, 1.0]))


def test_charts_cover_sphere():
    assert ATLAS.covering(uniform_sphere_points(10000, 1)).any(axis=0).all()


@pytest.mark.parametrize("chart", [NORTH, SOUTH])
def test_round_trips(chart):
    x = uniform_sphere_points(10000, 2)
    x = x[chart.domain_test(x)]
    assert np.max(np.abs(chart.inverse(chart.forward(x)) - x)) < 1e-12
    r = chart.image_radius
    u = np.random.default_rng(3).uniform(-r, r, (10000, 2))
    u = u[chart.in_image(u)]
    assert np.max(np.abs(chart.forward(chart.inverse(u)) - u)) < 1e-12 * max(1.0, r)
    assert np.all(chart.in_image(chart.forward(x)))


def test_transition_closed_form():
    v = NORTH.forward(overlap_points(100))
    np.testing.assert_allclose(ATLAS.transition(1, 0, v), stereo_inversion(v), atol=1e-10, rtol=0)
    np.testing.assert_allclose(ATLAS.transition(0, 1, SOUTH.forward(overlap_points(100, 1))),
                               stereo_inversion(SOUTH.forward(overlap_points(100, 1))), atol=1e-10, rtol=0)


def test_transition_outside_overlap_rejected():
    with pytest.raises(ValueError):
        ATLAS.transition(1, 0, np.array([[0.0, 0.0]]))


def test_transition_jacobian_nonsingular():
    v = NORTH.forward(overlap_points(1000, 4))
    det = jacobian_det(lambda w: ATLAS.transition(1, 0, w), v)
    assert np.min(np.abs(det)) > 1e-6
    np.testing.assert_allclose(det, -1.0 / np.sum(v * v, axis=1) ** 2, rtol=1e-6)


def test_partition_width_range():
    with pytest.raises(ValueError):
        bump_partition(ATLAS, 0.6)
    with pytest.raises(ValueError):
        bump_partition(ATLAS, 0.0)


def test_partition_poles_and_equator():
    bp = bump_partition(ATLAS, 0.25)
    w = bp.weights(np.array([[0.0, 0.0, 1.0], [1.0, 0.0, 0.0], [0.0, 0.0, -1.0]]))
    np.testing.assert_array_equal(w[:, 0], [1.0, 0.0])
    np.testing.assert_allclose(w[:, 1], [0.5, 0.5], rtol=0, atol=1e-15)
    np.testing.assert_array_equal(w[:, 2], [0.0, 1.0])


@given(st.floats(0.01, 0.49), st.integers(0, 1000))
def test_partition_invariants(width, seed):
    bp = bump_partition(ATLAS, width)
    x = uniform_sphere_points(10000, seed)
    w = bp.weights(x)
    assert np.max(np.abs(w.sum(axis=0) - 1)) <= 1e-12
    assert w.min() >= 0 and w.max() <= 1
    # each weight vanishes on the closed cap its chart leaves out, with margin
    for i, chart in enumerate(ATLAS.charts):
        near_cap = chart.sign * x[:, 2] <= -width
        assert np.all(w[i][near_cap] == 0)


def test_pullback_constant():
    f = SphereField(np.array([2.0]))
    g = pullback(f, NORTH, chart_lattice(NORTH, 33))
    np.testing.assert_allclose(g.values[g.mask], 2.0 / math.sqrt(4 * math.pi), rtol=1e-14)


def interpolation_error(m, seed=5):
    f = sample_sphere(SMOOTH, seed)
    grid = GridFunction(pullback(f, NORTH, chart_lattice(NORTH, m)))
    x = uniform_sphere_points(400, seed + 1)
    x = x[NORTH.domain_test(x)][:100]
    return np.max(np.abs(grid(NORTH.forward(x)) - f(x)))


@pytest.fixture(scope="module")
def interp_errors():
    return {m: interpolation_error(m) for m in (257, 513)}


def test_pullback_interpolation_second_order(interp_errors):
    assert 3.0 <= interp_errors[257] / interp_errors[513] <= 5.0
    assert interp_errors[513] < 1e-3


@pytest.mark.xfail(strict=True, reason="bilinear error h^2/8 |D^2 X| is about 1.2e-3 for the L = 32 field on "
                   "a chart of image radius sqrt(3) at m = 257; 1e-3 needs m near 513")
def test_pullback_interpolation_tolerance_m257(interp_errors):
    assert interp_errors[257] < 1e-3


def test_pullback_mask_fraction():
    g = pullback(SphereField(np.array([1.0])), SOUTH, chart_lattice(SOUTH, 257))
    assert abs((1 - g.mask.mean()) - (1 - math.pi / 4)) < 0.02


def test_pullback_lattice_mismatch():
    with pytest.raises(ValueError):
        pullback(SphereField(np.array([1.0])), NORTH, make_lattice(BoxDomain.unit(2), 9))


def test_patch_identity_for_exact_pullbacks():
    f = sample_sphere(SMOOTH, 7)
    pf = patch([exact_pullback(f, c) for c in ATLAS.charts], bump_partition(ATLAS, 0.25), ATLAS)
    x = uniform_sphere_points(10000, 8)
    assert np.max(np.abs(pf(x) - f(x))) < 1e-12


def test_patch_single_active_chart_near_pole():
    bp = bump_partition(ATLAS, 0.01)
    pf = patch([lambda u: np.full(len(u), 3.0), lambda u: np.full(len(u), -1.0)], bp, ATLAS)
    x = uniform_sphere_points(2000, 9)
    north = x[x[:, 2] > 0.02]
    np.testing.assert_array_equal(pf(north), 3.0)


@given(st.floats(0.0, 0.5), st.floats(0.0, 0.5), st.integers(0, 10**6))
def test_patch_perturbation_bound(d1, d2, seed):
    f = sample_sphere(SMOOTH, 10)
    fns = [lambda u, c=c, d=d: f(c.inverse(u)) + d for c, d in zip(ATLAS.charts, (d1, -d2))]
    pf = patch(fns, bump_partition(ATLAS, 0.3), ATLAS)
    x = uniform_sphere_points(1000, seed)
    assert np.max(np.abs(pf(x) - f(x))) <= max(d1, d2) + 1e-12


def test_patch_value_between_chart_values():
    f = sample_sphere(SMOOTH, 11)
    rng = np.random.default_rng(0)
    fns = [lambda u, c=c, a=a: f(c.inverse(u)) + a * np.sin(3 * u[..., 0])
           for c, a in zip(ATLAS.charts, rng.uniform(-1, 1, 2))]
    pf = patch(fns, bump_partition(ATLAS, 0.3), ATLAS)
    x = uniform_sphere_points(2000, 12)
    vals = np.array(pf.active_values(x))
    lo, hi = np.nanmin(vals, axis=0), np.nanmax(vals, axis=0)
    y = pf(x)
    assert np.all((y >= lo - 1e-12) & (y <= hi + 1e-12))


def test_patch_grid_backed():
    f = sample_sphere(SMOOTH, 13)
    grids = [pullback(f, c, chart_lattice(c, 513)) for c in ATLAS.charts]
    pf = patch(grids, bump_partition(ATLAS, 0.25), ATLAS)
    x = uniform_sphere_points(500, 14)
    assert np.max(np.abs(pf(x) - f(x))) < 1e-3


def test_patch_needs_one_function_per_chart():
    with pytest.raises(ValueError):
        patch([lambda u: u[..., 0]], bump_partition(ATLAS, 0.25), ATLAS)


def test_chartwise_constant_field():
    cfg = MCConfig(n_replicates=50, holder_replicates=20, levels=(2, 3, 4), points_per_axis=33)
    res = chartwise_regularity(sphere_isotropic([1.0]), ATLAS, 0, [8], cfg)
    assert res.degenerate
    assert all(r.verdict == "constant" for r in res.reports.values())


def test_chartwise_rejects_bad_input():
    cfg = MCConfig(n_replicates=10, levels=(2, 3), points_per_axis=17)
    from kcfield.samplers import brownian_motion

    with pytest.raises(ValueError):
        chartwise_regularity(brownian_motion(), ATLAS, 0, [8], cfg)
    with pytest.raises(ValueError):
        chartwise_regularity(SMOOTH, ATLAS, 1, [8], cfg)


@pytest.fixture(scope="module")
def smooth_result():
    cfg = MCConfig(n_replicates=400, holder_replicates=100, levels=(6, 7, 8, 9), points_per_axis=513, master_seed=4)
    return chartwise_regularity(SMOOTH, ATLAS, 0, [8, 16], cfg)


def test_chartwise_smooth_slopes(smooth_result):
    for report in smooth_result.reports.values():
        assert report.empirical_t >= 0.9
        assert report.chart in ("north", "south")


def test_chartwise_smooth_agreement(smooth_result):
    assert smooth_result.t_star_discrepancy <= 0.1
    assert all(z <= 3 for z in smooth_result.epsilon_z.values())
    d = smooth_result.to_dict()
    assert [c["chart"] for c in d["charts"]] == ["north", "south"]
