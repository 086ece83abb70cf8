import json
import math
import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st

from kcfield.engine import (MCConfig, StructureFunctionData, clamp_epsilon, estimate_structure_function,
                            expected_sobolev_norm, fit_moment_exponent, jackknife_se, predict_t_max, run_replicates,
                            run_verification, sobolev_boundary, _loo_means)
from kcfield.grid import BoxDomain, dyadic_pairs, make_lattice
from kcfield.samplers import (LatticeSampler, brownian_motion, covariance_field, fractional_bm, integrated_bm)


def line(m):
    return make_lattice(BoxDomain.unit(1), m)


def synthetic(theta, lags=(0.5, 0.25, 0.125), p=2.0, scale=1.0):
    lags = np.sort(np.asarray(lags))
    est = scale * lags**theta
    return StructureFunctionData(p, (0,), lags, est, 0.01 * est, 100)


def test_structure_function_bm_p2():
    lat = line(257)
    data = estimate_structure_function(brownian_motion(), lat, dyadic_pairs(lat, [2, 3, 4]), (0,), 2, 400, 1)
    i = int(np.argmin(np.abs(data.lags - 0.25)))
    assert abs(data.estimates[i] - 0.25) <= 4 * data.ses[i]


def test_structure_function_bm_p4():
    lat = line(257)
    data = estimate_structure_function(brownian_motion(), lat, dyadic_pairs(lat, [2, 3, 4]), (0,), 4, 400, 2)
    i = int(np.argmin(np.abs(data.lags - 0.125)))
    assert abs(data.estimates[i] - 3 / 64) <= 4 * data.ses[i]


def test_structure_function_zero_field():
    lat = line(65)
    data = estimate_structure_function(covariance_field("zero"), lat, dyadic_pairs(lat, [2, 3, 4]), (0,), 4, 100, 0)
    assert np.all(data.estimates == 0)
    assert fit_moment_exponent(data, 1).degenerate


def test_structure_function_preconditions():
    lat = line(65)
    pairs = dyadic_pairs(lat, [2, 3])
    with pytest.raises(ValueError):
        estimate_structure_function(brownian_motion(), lat, pairs, (1,), 2, 100, 0)
    with pytest.raises(ValueError):
        estimate_structure_function(brownian_motion(), lat, pairs, (0,), 2, 50, 0)
    with pytest.raises(ValueError):
        estimate_structure_function(brownian_motion(), lat, dyadic_pairs(lat, []), (0,), 2, 100, 0)


def test_structure_data_validation():
    with pytest.raises(ValueError):
        StructureFunctionData(2.0, (0,), [0.5, 0.25], [1.0, 1.0], [0.1, 0.1], 10)
    with pytest.raises(ValueError):
        StructureFunctionData(2.0, (0,), [0.25, 0.5], [1.0, -1.0], [0.1, 0.1], 10)


def test_se_halves_with_four_times_the_replicates():
    lat = line(257)
    pairs = dyadic_pairs(lat, [2, 3, 4])
    a = estimate_structure_function(brownian_motion(), lat, pairs, (0,), 2, 500, 1)
    b = estimate_structure_function(brownian_motion(), lat, pairs, (0,), 2, 1000, 1)
    assert np.all((a.ses / b.ses >= 1.25) & (a.ses / b.ses <= 1.6))


def test_jackknife_of_mean_is_standard_error():
    x = np.random.default_rng(0).standard_normal((300, 2))
    np.testing.assert_allclose(jackknife_se(_loo_means(x)), x.std(axis=0, ddof=1) / math.sqrt(300), rtol=1e-10)


def test_fit_exact_power_law():
    fit = fit_moment_exponent(synthetic(2.0), 1)
    assert fit.theta_hat == pytest.approx(2.0, abs=1e-10)
    assert fit.epsilon_hat == pytest.approx(1.0, abs=1e-10)
    assert fit.r_squared == pytest.approx(1.0, abs=1e-10)
    assert fit.epsilon_hat == fit.theta_hat - 1


@given(st.floats(0.1, 30), st.floats(1e-3, 1e3), st.integers(1, 3))
def test_fit_recovers_synthetic_laws(theta, scale, n):
    fit = fit_moment_exponent(synthetic(theta, lags=2.0 ** -np.arange(1, 8), scale=scale), n)
    assert fit.theta_hat == pytest.approx(theta, rel=1e-10)
    assert fit.intercept == pytest.approx(math.log(scale), abs=1e-8)


@given(st.floats(1e-3, 1e3))
def test_fit_scaling_invariance(c):
    lat = line(129)
    data = estimate_structure_function(brownian_motion(), lat, dyadic_pairs(lat, [2, 3, 4, 5]), (0,), 4, 100, 3)
    a, b = fit_moment_exponent(data, 1), fit_moment_exponent(data.scaled(c), 1)
    assert b.theta_hat == pytest.approx(a.theta_hat, abs=1e-10)
    assert b.epsilon_hat == pytest.approx(a.epsilon_hat, abs=1e-10)


def test_fit_degenerate_and_too_few_points():
    zero = StructureFunctionData(2.0, (0,), [0.25, 0.5, 1.0], [0.0, 0.0, 0.0], [0.0, 0.0, 0.0], 10)
    fit = fit_moment_exponent(zero, 1)
    assert fit.degenerate and fit.theta_hat is None
    with pytest.raises(ValueError):
        fit_moment_exponent(synthetic(2.0, lags=(0.25, 0.5)), 1)


def test_bm_epsilon_at_p4():
    lat = line(4097)
    data = estimate_structure_function(brownian_motion(), lat, dyadic_pairs(lat, range(2, 9)), (0,), 4, 2000, 11)
    assert 0.85 <= fit_moment_exponent(data, 1).epsilon_hat <= 1.15


def test_predict_examples():
    assert predict_t_max(0, 4, 1, 1) == 0.25
    assert predict_t_max(1, 8, 3, 1) == 1 + 3 / 8
    sup = max(predict_t_max(0, p, p / 2 - 1, 1) for p in np.linspace(2.01, 1e6, 2000))
    assert sup == pytest.approx(0.5, abs=1e-5)


def test_predict_errors_and_clamp():
    with pytest.raises(ValueError):
        predict_t_max(0, 4, 0.0, 1)
    with pytest.raises(ValueError):
        predict_t_max(0, 1.0, 0.5, 1)
    with pytest.warns(UserWarning):
        assert clamp_epsilon(9.0, 4.0) == (4.0, True)


@given(st.integers(0, 3), st.floats(1.5, 64), st.floats(0.01, 80), st.integers(1, 3))
def test_predict_monotone_and_clamped(d, p, eps, n):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        t = predict_t_max(d, p, eps, n)
        assert predict_t_max(d + 1, p, eps, n) >= t
        assert predict_t_max(d, p, eps * 1.1, n) >= t
        if eps > p:
            assert t == predict_t_max(d, p, p, n)
        if p - n <= eps <= p:
            # on the 1 - n/p branch a larger p can only help
            assert predict_t_max(d, p * 1.5, min(eps * 1.5, p * 1.5), n) >= t


@given(st.floats(2.5, 200), st.floats(1.01, 4))
def test_predict_nondecreasing_along_bm_family(p, factor):
    t = lambda q: predict_t_max(0, q, q / 2 - 1, 1)
    assert t(p * factor) >= t(p)


@given(st.floats(4, 64), st.integers(1, 3), st.floats(1e-6, 0.5))
def test_predict_branch_switch(p, n, delta):
    eps_star = p - n
    below = predict_t_max(0, p, eps_star - delta, n)
    above = predict_t_max(0, p, min(eps_star + delta, p), n)
    assert below == pytest.approx((eps_star - delta) / p)
    assert above == pytest.approx(1 - n / p)


def test_expected_sobolev_zero_field():
    mean, se = expected_sobolev_norm(covariance_field("zero"), line(65), 0.3, 4, 20, 0)
    assert mean == 0 and se == 0


def test_expected_sobolev_bm_stable_below_boundary():
    # common samples on nested lattices isolate the quadrature change from Monte Carlo noise
    rows = sobolev_boundary(brownian_motion(), [0.3], [129, 257, 513], 4, 200, 1)
    a, b = rows[1].estimate, rows[2].estimate
    assert abs(b - a) / a < 0.05
    mean, se = expected_sobolev_norm(brownian_motion(), line(513), 0.3, 4, 200, 1)
    assert mean == pytest.approx(b, rel=1e-12)


def test_expected_sobolev_bm_grows_above_boundary():
    vals = [expected_sobolev_norm(brownian_motion(), line(m), 0.6, 4, 100, 1)[0] for m in (129, 257, 513)]
    assert vals[0] < vals[1] < vals[2]
    assert vals[2] - vals[1] > vals[1] - vals[0]


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_sobolev_boundary_flags(seed):
    rows = sobolev_boundary(brownian_motion(), [0.0, 0.3, 0.45, 0.55, 0.7], [257, 513, 1025], 4, 200, seed)
    flags = {r.nu: r.divergent for r in rows}
    assert flags == {0.0: False, 0.3: False, 0.45: False, 0.55: True, 0.7: True}


def test_sobolev_boundary_zero_field():
    rows = sobolev_boundary(covariance_field("zero"), [0.0, 0.6], [33, 65, 129], 4, 20, 0)
    assert all(r.estimate == 0 and not r.divergent for r in rows)


def test_sobolev_boundary_nu_zero_is_lp_norm():
    rows = sobolev_boundary(brownian_motion(), [0.0], [33, 65, 129], 4, 50, 0)
    lat = line(129)
    sampler = LatticeSampler(brownian_motion(), lat)
    from kcfield.samplers import replicate_rng

    x = sampler.draw([replicate_rng(0, i) for i in range(50)])[(0,)]
    lp = np.mean(np.sum(lat.dual_cell_weights() * np.abs(x) ** 4, axis=1))
    assert rows[-1].estimate == pytest.approx(lp, rel=1e-12)


def test_run_replicates_thread_independent():
    sampler = LatticeSampler(brownian_motion(), line(65))
    work = lambda draws, idx: draws[(0,)].sum(axis=1)
    a = np.concatenate(run_replicates(sampler, 230, 5, work, threads=1, chunk_size=50))
    b = np.concatenate(run_replicates(sampler, 230, 5, work, threads=4, chunk_size=50))
    assert np.array_equal(a, b)


def test_verification_bm():
    cfg = MCConfig(points_per_axis=4097)
    report, _ = run_verification(brownian_motion(), 0, [4, 8, 16], cfg)
    assert 0.30 <= report.t_star <= 0.47
    assert 0.40 <= report.empirical_t <= 0.55
    assert report.verdict == "pass"
    assert report.t_star == max(r.t_max for r in report.per_p)


def test_verification_fbm07():
    cfg = MCConfig(points_per_axis=4097, master_seed=7)
    report, _ = run_verification(fractional_bm(0.7), 0, [4, 8, 16], cfg)
    assert abs(report.t_star - (0.7 - 1 / 16)) <= 0.08
    assert abs(report.empirical_t - 0.7) <= 0.08


def test_verification_integrated_bm():
    cfg = MCConfig(points_per_axis=4097, master_seed=3)
    report, _ = run_verification(integrated_bm(), 1, [8, 16], cfg)
    assert 1.30 <= report.t_star <= 1.47
    assert 1.40 <= report.empirical_t <= 1.55
    assert report.alphas == [[1]]


def test_verification_strict_mode_checks_all_orders():
    cfg = MCConfig(n_replicates=200, holder_replicates=50, points_per_axis=1025, strict=True, levels=range(2, 9))
    report, data = run_verification(integrated_bm(), 1, [8], cfg)
    assert report.alphas == [[0], [1]]
    # order-0 increments are smoother, so the binding exponent comes from the derivative
    assert report.per_p[0].epsilon_hat < 4


def test_verification_rejects_unavailable_order():
    with pytest.raises(ValueError):
        run_verification(brownian_motion(), 1, [4], MCConfig(n_replicates=10))


def test_verification_constant_field():
    cfg = MCConfig(n_replicates=100, holder_replicates=20, points_per_axis=257, levels=range(2, 8))
    report, _ = run_verification(covariance_field("zero"), 0, [4, 8], cfg)
    assert report.verdict == "constant" and report.degenerate
    assert report.t_star is None and report.empirical_t is None


def test_report_json_schema_and_threads():
    cfg1 = MCConfig(n_replicates=300, holder_replicates=60, points_per_axis=513, levels=range(2, 9), threads=1)
    cfg3 = MCConfig(n_replicates=300, holder_replicates=60, points_per_axis=513, levels=range(2, 9), threads=3)
    a = json.dumps(run_verification(brownian_motion(), 0, [4, 8], cfg1)[0].to_dict())
    b = json.dumps(run_verification(brownian_motion(), 0, [4, 8], cfg3)[0].to_dict())
    assert a == b
    d = json.loads(a)
    for key in ("spec", "d", "n", "per_p", "t_star", "empirical_t", "empirical_se", "verdict", "mc_config", "seeds"):
        assert key in d
    assert {"p", "epsilon_hat", "epsilon_se", "t_max"} <= set(d["per_p"][0])
