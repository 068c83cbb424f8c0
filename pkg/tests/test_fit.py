import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rpareto.brown_resnick import QmcConfig
from rpareto.fit import (
    EmptyExceedanceError,
    NonConvergenceError,
    averaged_censored_fit,
    default_starts,
    fit_gpd,
    from_unconstrained,
    godambe,
    jackknife_se,
    local_shape_mean,
    optimize,
    score_ratio_statistic,
    select_exceedances,
    threshold_stability,
    to_unconstrained,
    transform_margins,
)
from rpareto.objectives import build_objective
from rpareto.risk import RiskFunctional
from rpareto.simulate import SimulationConfig, simulate_pareto
from rpareto.variogram import VariogramParams, regular_grid

SUM = RiskFunctional("sum")
TRUTH = VariogramParams(1.0, 3.0)


@pytest.fixture(scope="module")
def small_problem():
    sites = regular_grid(4, 4, 12.0)
    data = simulate_pareto(SimulationConfig(4000, 1, TRUTH, sites))
    exc = select_exceedances(data, SUM, 0.95)
    return sites, exc


@pytest.fixture(scope="module")
def spectral_fit(small_problem):
    sites, exc = small_problem
    obj = build_objective("spectral", sites, exc)
    return obj, optimize(obj, [VariogramParams(0.7, 5.0)])


class TestTransformMargins:
    def test_hand_values(self):
        out = transform_margins(np.array([[1.0], [2.0], [3.0]]))
        np.testing.assert_allclose(out[:, 0], [4 / 3, 2.0, 4.0])

    def test_ties_get_average_rank(self):
        out = transform_margins(np.array([[1.0], [1.0], [3.0]]))
        np.testing.assert_allclose(out[:, 0], [1 / (1 - 1.5 / 4)] * 2 + [4.0])

    @given(st.lists(st.integers(-1000, 1000), min_size=3, max_size=40, unique=True))
    def test_invariant_under_monotone_maps(self, xs):
        x = np.array(xs, dtype=float)[:, None]
        np.testing.assert_array_equal(transform_margins(x), transform_margins(3 * x**3 + x - 7))

    def test_constant_column_named(self):
        data = np.column_stack([np.arange(5.0), np.ones(5)])
        with pytest.raises(ValueError, match="'b'"):
            transform_margins(data, ["a", "b"])

    def test_non_finite(self):
        with pytest.raises(ValueError):
            transform_margins(np.array([[1.0, 2.0], [np.nan, 3.0]]))


class TestGpd:
    def test_exponential(self):
        y = np.random.default_rng(0).exponential(2.0, 20000)
        fit = fit_gpd(y, 0.0)
        assert abs(fit.xi) < 0.03
        assert fit.sigma == pytest.approx(2.0, rel=0.03)

    def test_unit_pareto_has_unit_shape(self):
        x = 1.0 / (1.0 - np.random.default_rng(1).random(20000))
        fit = fit_gpd(x, 10.0)
        assert fit.xi == pytest.approx(1.0, abs=0.1)
        assert fit.zeta_u == pytest.approx(0.1, abs=0.01)

    @given(st.floats(0.1, 100.0))
    def test_scale_equivariance(self, c):
        x = 1.0 / (1.0 - np.random.default_rng(2).random(2000))
        a, b = fit_gpd(x, 5.0), fit_gpd(c * x, 5.0 * c)
        assert b.xi == pytest.approx(a.xi, abs=1e-4)
        assert b.sigma == pytest.approx(c * a.sigma, rel=1e-4)

    def test_too_few(self):
        with pytest.raises(ValueError):
            fit_gpd(np.arange(10.0), 5.0)

    def test_stability_scan_and_local_shape(self):
        rng = np.random.default_rng(3)
        data = 1.0 / (1.0 - rng.random((5000, 3)))
        fits = threshold_stability(data[:, 0], [0.9, 0.95, 0.99, 0.9999])
        assert len(fits) == 3  # the last threshold leaves too few excesses
        assert all(abs(f.xi - 1.0) < 0.35 for f in fits)
        assert local_shape_mean(data, 0.95) == pytest.approx(1.0, abs=0.2)


class TestSelectExceedances:
    def test_count(self):
        data = np.random.default_rng(0).random((10000, 3)) + 0.1
        assert select_exceedances(data, SUM, 0.99).n_events == 100

    def test_zero_quantile_selects_everything(self):
        data = np.random.default_rng(0).random((50, 3)) + 0.1
        exc = select_exceedances(data, SUM, 0.0)
        assert exc.n_events == 50
        np.testing.assert_array_equal(exc.indices, np.arange(50))

    @given(st.floats(0.0, 0.98), st.floats(0.0, 0.98))
    def test_monotone_in_quantile(self, q1, q2):
        data = np.random.default_rng(5).random((500, 4)) + 0.1
        lo, hi = sorted((q1, q2))
        assert select_exceedances(data, SUM, hi).n_events <= select_exceedances(data, SUM, lo).n_events

    def test_empty(self):
        data = np.ones((100, 2))
        with pytest.raises(EmptyExceedanceError):
            select_exceedances(data, SUM, 0.5)

    def test_bad_quantile(self):
        with pytest.raises(ValueError):
            select_exceedances(np.ones((4, 2)), SUM, 1.0)


class TestTransforms:
    @given(st.floats(0.01, 1.99), st.floats(1e-3, 1e3), st.floats(-1.5, 1.5), st.floats(1.01, 20.0))
    def test_round_trip(self, kappa, tau, eta, a):
        free = ("kappa", "tau", "eta", "a")
        p = VariogramParams(kappa, tau, eta, a)
        q = from_unconstrained(to_unconstrained(p, free), p, free)
        np.testing.assert_allclose([q.kappa, q.tau, q.eta, q.a], [kappa, tau, eta, a], rtol=1e-8)

    @given(st.lists(st.floats(-1e4, 1e4), min_size=4, max_size=4))
    def test_always_feasible(self, z):
        p = from_unconstrained(np.array(z), VariogramParams(1, 1), ("kappa", "tau", "eta", "a"))
        assert 0 < p.kappa <= 2 and p.tau > 0 and abs(p.eta) <= math.pi / 2 and p.a >= 1


class TestOptimize:
    def test_recovers_truth(self, spectral_fit):
        _, fit = spectral_fit
        assert fit.converged
        assert fit.theta_hat.kappa == pytest.approx(TRUTH.kappa, abs=0.1)
        assert fit.theta_hat.tau == pytest.approx(TRUTH.tau, rel=0.2)

    def test_deterministic(self, spectral_fit):
        obj, fit = spectral_fit
        again = optimize(obj, [VariogramParams(0.7, 5.0)])
        assert again.theta_hat == fit.theta_hat

    def test_best_of_several_starts(self, spectral_fit, small_problem):
        obj, fit = spectral_fit
        sites, _ = small_problem
        multi = optimize(obj, default_starts(sites, 3, 0))
        assert len(multi.starts) == 3
        assert multi.objective_value >= fit.objective_value - 1e-4

    def test_non_convergence(self, spectral_fit):
        obj, _ = spectral_fit
        with pytest.raises(NonConvergenceError) as err:
            optimize(obj, [VariogramParams(0.7, 5.0)], maxiter=2)
        assert len(err.value.outcomes) == 1
        assert not err.value.outcomes[0].converged

    def test_fixed_parameters_kept(self, spectral_fit):
        obj, _ = spectral_fit
        fit = optimize(obj, [VariogramParams(0.7, 5.0)], free=("tau",))
        assert fit.theta_hat.kappa == 0.7

    def test_unknown_free(self, spectral_fit):
        obj, _ = spectral_fit
        with pytest.raises(ValueError):
            optimize(obj, [VariogramParams(0.7, 5.0)], free=("nugget",))


@pytest.fixture(scope="module")
def censored_obj():
    sites = regular_grid(3, 2, 6.0)
    data = simulate_pareto(SimulationConfig(1500, 4, TRUTH, sites))
    exc = select_exceedances(data, RiskFunctional("max"), 0.97)
    return build_objective("censored", sites, exc, QmcConfig(101, 2, 0))


class TestAveragedCensoredFit:
    def test_identical_seeds_have_no_spread(self, censored_obj):
        fit = averaged_censored_fit(censored_obj, 2, [VariogramParams(0.8, 4.0)], seeds=[3, 3])
        assert fit.replicates[0] == fit.replicates[1]
        assert fit.se == {"kappa": 0.0, "tau": 0.0}

    def test_mean_of_replicates(self, censored_obj):
        fit = averaged_censored_fit(censored_obj, 3, [VariogramParams(0.8, 4.0)])
        np.testing.assert_allclose(fit.theta_hat.kappa, np.mean([r.kappa for r in fit.replicates]))
        assert fit.se["kappa"] >= 0

    def test_needs_two(self, censored_obj):
        with pytest.raises(ValueError):
            averaged_censored_fit(censored_obj, 1, [VariogramParams(0.8, 4.0)])


class TestStandardErrors:
    def test_jackknife_identical_blocks(self, small_problem):
        # duplicating one event many times makes every block refit identical
        sites, exc = small_problem
        rep = exc.subset(np.zeros(40, dtype=int))
        obj = build_objective("spectral", sites, rep)
        fit = optimize(obj, [VariogramParams(1.0, 3.0)])
        jk = jackknife_se(obj, fit.theta_hat, 4)
        np.testing.assert_allclose(list(jk.se.values()), 0.0, atol=1e-3)

    def test_jackknife_reasonable(self, spectral_fit):
        obj, fit = spectral_fit
        jk = jackknife_se(obj, fit.theta_hat, 10)
        assert jk.estimates.shape == (10, 2)
        assert 0 < jk.se["kappa"] < 0.2

    def test_jackknife_block_count(self, spectral_fit):
        obj, fit = spectral_fit
        with pytest.raises(ValueError):
            jackknife_se(obj, fit.theta_hat, 1)

    def test_godambe_symmetric_and_agrees_with_jackknife(self, spectral_fit):
        obj, fit = spectral_fit
        g = godambe(obj, fit.theta_hat)
        np.testing.assert_allclose(g.G, g.G.T, rtol=1e-8)
        np.testing.assert_allclose(g.K, g.K.T)
        assert np.all(np.linalg.eigvalsh(-g.K) > 0)  # maximum of the objective
        jk = jackknife_se(obj, fit.theta_hat, 10)
        assert g.se["kappa"] == pytest.approx(jk.se["kappa"], rel=0.6)

    def test_godambe_reparametrisation(self, small_problem):
        # with tau fixed, rescaling the sites by c leaves kappa's standard error unchanged
        sites, exc = small_problem
        th = VariogramParams(1.0, 3.0)
        a = godambe(build_objective("spectral", sites, exc), th, free=("kappa",))
        scaled = [type(s)(s.id, 2 * s.x, 2 * s.y) for s in sites]
        b = godambe(build_objective("spectral", scaled, exc), th.with_values(tau=6.0), free=("kappa",))
        assert b.se["kappa"] == pytest.approx(a.se["kappa"], rel=1e-4)

    def test_score_ratio(self, spectral_fit):
        obj, fit = spectral_fit
        assert score_ratio_statistic(obj, fit.theta_hat, fit.theta_hat) == 0.0
        assert score_ratio_statistic(obj, VariogramParams(1.3, 2.0), fit.theta_hat) >= 0.0


class TestDefaultStarts:
    def test_first_start(self):
        sites = regular_grid(3, 3, 10.0)
        starts = default_starts(sites, 4, 0)
        assert starts[0].kappa == 1.0 and starts[0].tau == pytest.approx(5.0)
        assert starts == default_starts(sites, 4, 0)
        assert starts[1:] != default_starts(sites, 4, 1)[1:]
