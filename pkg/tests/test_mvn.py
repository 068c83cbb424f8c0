import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from oracles import equicorrelated_orthant
from rpareto.mvn import (
    SingularCovarianceError,
    _running_mean_var,
    generating_vector,
    is_prime,
    korobov_vector,
    lattice_points,
    mvn_cdf,
    mvn_cdf_batch,
    p2_criterion,
    pivoted_cholesky,
)


def equicorr(d, rho):
    return np.full((d, d), rho) + (1 - rho) * np.eye(d)


class TestLattice:
    def test_points_in_unit_cube(self):
        pts = lattice_points(101, korobov_vector(101, 17, 4), np.full(4, 0.3))
        assert pts.shape == (101, 4)
        assert np.all((pts >= 0) & (pts <= 1))

    def test_unshifted_first_coordinate_is_regular(self):
        pts = lattice_points(11, [1, 3], [0.0, 0.0])
        frac = (np.arange(1, 12) % 11) / 11
        np.testing.assert_allclose(pts[:, 0], np.abs(2 * frac - 1))

    def test_requires_prime(self):
        with pytest.raises(ValueError):
            lattice_points(100, [1], [0.0])

    def test_is_prime(self):
        assert [n for n in range(20) if is_prime(n)] == [2, 3, 5, 7, 11, 13, 17, 19]

    def test_generating_vector_deterministic(self):
        np.testing.assert_array_equal(generating_vector(499, 7), generating_vector(499, 7))
        v = generating_vector(499, 7)
        assert v[0] == 1 and np.all((v > 0) & (v < 499))

    def test_generator_beats_trivial(self):
        v = generating_vector(101, 5)
        assert p2_criterion(101, v) < p2_criterion(101, korobov_vector(101, 1, 5))

    def test_p2_exact_small_case(self):
        # One dimension, all points: criterion is the weighted sum over the lattice of B2 terms.
        p = 7
        x = np.arange(p) / p
        expected = np.mean(1 + 2 * math.pi**2 * (x * x - x + 1 / 6)) - 1
        assert p2_criterion(p, [1]) == pytest.approx(expected, abs=1e-15)


class TestRunningVariance:
    def test_matches_variance_of_mean(self):
        x = np.random.default_rng(0).normal(size=(3, 12))
        mean, var = _running_mean_var(x)
        np.testing.assert_allclose(mean, x.mean(axis=1), rtol=1e-13)
        np.testing.assert_allclose(var, x.var(axis=1, ddof=1) / 12, rtol=1e-12)


class TestPivotedCholesky:
    def test_reconstructs_permuted_covariance(self):
        rng = np.random.default_rng(1)
        A = rng.normal(size=(5, 5))
        S = A @ A.T + 5 * np.eye(5)
        b = rng.normal(size=5)
        L, bp, perm = pivoted_cholesky(b[None], S[None])
        np.testing.assert_allclose(L[0] @ L[0].T, S[np.ix_(perm[0], perm[0])], atol=1e-12)
        np.testing.assert_array_equal(bp[0], b[perm[0]])

    def test_first_pivot_is_smallest_limit(self):
        b = np.array([[2.0, -1.0, 0.5]])
        _, _, perm = pivoted_cholesky(b, np.eye(3)[None])
        assert perm[0, 0] == 1

    def test_tie_goes_to_lowest_index(self):
        _, _, perm = pivoted_cholesky(np.zeros((1, 3)), np.eye(3)[None])
        np.testing.assert_array_equal(perm[0], [0, 1, 2])

    def test_singular(self):
        S = np.ones((3, 3))
        with pytest.raises(SingularCovarianceError) as err:
            pivoted_cholesky(np.zeros((1, 3)), S[None])
        assert err.value.pivot in (1, 2)


class TestMvnCdf:
    def test_identity_orthant(self):
        est = mvn_cdf([0.0, 0.0], np.eye(2), seed=1)
        assert est.value == pytest.approx(0.25, abs=1e-12)

    def test_one_dimensional_exact(self):
        est = mvn_cdf([0.7], [[4.0]])
        assert est.value == pytest.approx(stats.norm.cdf(0.35), abs=1e-15)
        assert est.probable_error == 0.0

    def test_equicorrelated_orthant(self):
        est = mvn_cdf(np.zeros(3), equicorr(3, 0.5), p=4999, p_prime=10, seed=3)
        assert est.value == pytest.approx(0.25, abs=1e-4)

    def test_matches_scipy_dim6(self):
        rng = np.random.default_rng(4)
        A = rng.normal(size=(6, 6))
        S = A @ A.T + np.eye(6)
        b = rng.normal(size=6) + 1.0
        est = mvn_cdf(b, S, p=4999, p_prime=10, seed=2)
        ref = stats.multivariate_normal(np.zeros(6), S).cdf(b)
        assert abs(est.value - ref) < max(3 * est.probable_error, 2e-4)

    def test_infinite_limits(self):
        S = equicorr(3, 0.3)
        a = mvn_cdf([0.5, np.inf, np.inf], S, seed=0)
        assert a.value == pytest.approx(stats.norm.cdf(0.5), abs=1e-14)
        z = mvn_cdf([0.5, -np.inf, 1.0], S, seed=0)
        assert z.value == 0.0

    def test_same_seed_same_value(self):
        S = equicorr(5, 0.4)
        b = np.linspace(-0.5, 1.0, 5)
        assert mvn_cdf(b, S, seed=9) == mvn_cdf(b, S, seed=9)

    def test_non_symmetric(self):
        with pytest.raises(ValueError, match="symmetric"):
            mvn_cdf([0.0, 0.0], [[1.0, 0.5], [0.0, 1.0]])

    def test_singular(self):
        with pytest.raises(np.linalg.LinAlgError):
            mvn_cdf([0.0, 0.0, 0.0], np.ones((3, 3)))

    def test_error_shrinks_with_p(self):
        S = equicorr(8, 0.5)
        b = np.full(8, 0.3)
        small = np.mean([mvn_cdf(b, S, p=101, p_prime=10, seed=s).probable_error for s in range(5)])
        large = np.mean([mvn_cdf(b, S, p=4999, p_prime=10, seed=s).probable_error for s in range(5)])
        assert large < small

    @given(st.integers(2, 6), st.floats(0.0, 0.9), st.floats(-2, 2))
    def test_probability_bounds_and_oracle(self, d, rho, level):
        b = np.full(d, level)
        est = mvn_cdf(b, equicorr(d, rho), p=499, p_prime=5, seed=0)
        assert 0.0 <= est.value <= 1.0
        ref = equicorrelated_orthant(b, rho)
        assert abs(est.value - ref) < max(3 * est.probable_error, 1e-3)


class TestBatch:
    def test_independent_of_batch_composition(self):
        S = np.stack([equicorr(4, r) for r in (0.1, 0.5, 0.8)])
        b = np.stack([np.full(4, v) for v in (0.0, 0.5, -0.3)])
        seeds = [(1, k) for k in range(3)]
        full, _ = mvn_cdf_batch(b, S, seeds=seeds)
        for k in range(3):
            one, _ = mvn_cdf_batch(b[k : k + 1], S[k : k + 1], seeds=[seeds[k]])
            assert one[0] == full[k]

    def test_fixed_orders_are_continuous(self):
        S = equicorr(6, 0.5)[None]
        b0 = np.linspace(-1, 1, 6)[None]
        orders = np.array([[5, 4, 3, 2, 1, 0]])
        v0, _ = mvn_cdf_batch(b0, S, seeds=[0], orders=orders)
        v1, _ = mvn_cdf_batch(b0 + 1e-7, S, seeds=[0], orders=orders)
        assert abs(v1[0] - v0[0]) < 1e-6

    def test_orders_require_finite(self):
        with pytest.raises(ValueError):
            mvn_cdf_batch([[0.0, np.inf]], np.eye(2)[None], seeds=[0], orders=[[0, 1]])

    def test_needs_two_shifts(self):
        with pytest.raises(ValueError):
            mvn_cdf_batch(np.zeros((1, 3)), np.eye(3)[None], p_prime=1)
