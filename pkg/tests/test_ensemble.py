import math
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from sklearn.base import clone

from oracles import normal_equations
from wslim._validation import ShapeMismatchError
from wslim.ensemble import (
    GaussianNeighborhood,
    KernelSpec,
    Neighborhood,
    ParameterDraws,
    block_correlation,
    conjugate_gaussian_posterior,
    default_neighborhood_size,
    empirical_covariance,
    gaussian_neighborhood,
    kernel_weights,
    knn_neighborhood,
    make_rng,
    point_neighborhood,
    predict_linear,
    simulate_predictors,
)

# generated once with seed 7 and frozen
GOLDEN_POINTS = [[0.37230694721394797, -1.9059573863720756],
                 [1.5852596068007687, -2.21553141877078],
                 [1.1009419286151119, -1.9463070205041275],
                 [1.4131975931661853, -1.6649629484083968]]

grid = st.integers(-300, 300).map(lambda v: v / 100.0)


class TestPredictLinear:
    def test_zero_draws(self, rng):
        out = predict_linear(rng.normal(size=(4, 3)), np.zeros((3, 6)))
        assert out.shape == (4, 6) and not out.any()

    def test_scalar(self):
        assert predict_linear([[2.0]], [[3.0]])[0, 0] == 6.0

    def test_intercept_added(self):
        out = predict_linear([[1.0, 2.0]], ParameterDraws([[1.0, 0.0], [0.0, 1.0]], [10.0, 20.0]))
        assert np.array_equal(out, [[11.0, 22.0]])

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatchError):
            predict_linear(np.zeros((2, 3)), np.zeros((4, 5)))

    @given(arrays(np.float64, (3, 2), elements=grid), arrays(np.float64, (3, 2), elements=grid),
           arrays(np.float64, (2, 4), elements=grid), arrays(np.float64, (2, 4), elements=grid))
    def test_bilinear(self, x1, x2, t1, t2):
        assert np.allclose(predict_linear(x1 + x2, t1), predict_linear(x1, t1) + predict_linear(x2, t1),
                           atol=1e-12)
        assert np.allclose(predict_linear(x1, t1 + t2), predict_linear(x1, t1) + predict_linear(x1, t2),
                           atol=1e-12)


class TestParameterDraws:
    def test_masked_keeps_rows(self, rng):
        d = ParameterDraws(rng.normal(size=(4, 3)))
        m = d.masked([1, 3])
        assert np.array_equal(m.theta[[1, 3]], d.theta[[1, 3]])
        assert not m.theta[[0, 2]].any()

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            ParameterDraws([[np.nan]])

    def test_intercept_length(self):
        with pytest.raises(ShapeMismatchError):
            ParameterDraws(np.zeros((2, 3)), [1.0, 2.0])


class TestNeighborhoods:
    def test_zero_covariance(self):
        nb = gaussian_neighborhood([1.0, 2.0], np.zeros((2, 2)), 10, 5)
        assert np.array_equal(nb.points, np.tile([1.0, 2.0], (5, 1)))

    def test_golden_points(self):
        nb = gaussian_neighborhood([1.0, -2.0], [[2.0, 0.5], [0.5, 1.0]], 10, 4, seed=7)
        assert np.array_equal(nb.points, GOLDEN_POINTS)
        assert np.array_equal(nb.weights, np.ones(4))

    def test_default_size(self):
        assert default_neighborhood_size(5) == 50
        assert default_neighborhood_size(20) == 60
        nb = gaussian_neighborhood(np.zeros(20), np.eye(20), 100)
        assert nb.size == 60

    def test_moments(self):
        cov = np.array([[2.0, 0.6], [0.6, 1.0]])
        nb = gaussian_neighborhood([3.0, -1.0], cov, 4, 100000, seed=1)
        sd = np.sqrt(np.diag(cov) / 4)
        assert np.all(np.abs(nb.points.mean(axis=0) - [3.0, -1.0]) < 5 * sd / math.sqrt(1e5))
        assert np.allclose(np.cov(nb.points.T), cov / 4, atol=0.02 * 0.5)

    def test_non_psd_clipped(self):
        with pytest.warns(RuntimeWarning):
            nb = gaussian_neighborhood([0.0, 0.0], [[1.0, 2.0], [2.0, 1.0]], 1, 10)
        assert nb.psd_clipped

    def test_reproducible(self):
        a = gaussian_neighborhood([0.0], [[1.0]], 1, 10, seed=3)
        b = gaussian_neighborhood([0.0], [[1.0]], 1, 10, seed=3)
        assert np.array_equal(a.points, b.points)

    def test_knn(self):
        X = np.array([[0.0], [5.0], [1.0], [-2.0]])
        nb = knn_neighborhood([0.2], X, 2)
        assert np.array_equal(nb.points.ravel(), [0.0, 1.0])

    def test_point_neighborhood(self):
        nb = point_neighborhood([1.0, 2.0])
        assert nb.size == 1 and np.array_equal(nb.points, [[1.0, 2.0]])

    def test_weights_validated(self):
        with pytest.raises(ValueError):
            Neighborhood(np.zeros((2, 1)), [0.0], [0.0, 0.0])
        with pytest.raises(ValueError):
            Neighborhood(np.zeros((2, 1)), [0.0], [1.0, -1.0])

    def test_estimator(self, rng):
        X = rng.normal(size=(200, 3))
        est = GaussianNeighborhood(size=7, random_state=2).fit(X)
        assert np.allclose(est.covariance_, empirical_covariance(X))
        assert est.sample(np.zeros(3)).size == 7
        assert clone(est).get_params() == est.get_params()

    def test_uncentered_covariance(self, rng):
        X = rng.normal(size=(10, 2)) + 3
        assert np.allclose(empirical_covariance(X, centered=False), X.T @ X)


class TestKernel:
    def test_center_weight_one(self):
        assert kernel_weights(KernelSpec(scale_matrix=np.eye(2)), [1.0, 1.0], [[1.0, 1.0]])[0] == 1.0

    def test_zero_scale(self, rng):
        w = kernel_weights(KernelSpec(scale_matrix=np.zeros((2, 2))), [0, 0], rng.normal(size=(5, 2)))
        assert np.array_equal(w, np.ones(5))

    def test_unit_distance(self):
        w = kernel_weights(KernelSpec(scale_matrix=[[1.0]]), [0.0], [[1.0]])
        assert w[0] == pytest.approx(math.exp(-1), abs=1e-15)

    def test_uniform(self, rng):
        assert np.array_equal(kernel_weights(KernelSpec("uniform"), [0.0], rng.normal(size=(3, 1))),
                              np.ones(3))

    def test_asymmetric_rejected(self):
        with pytest.raises(ValueError):
            KernelSpec(scale_matrix=[[1.0, 0.5], [0.0, 1.0]])

    @given(arrays(np.float64, (6, 2), elements=grid))
    def test_range_and_maximum(self, pts):
        spec = KernelSpec(scale_matrix=[[1.0, 0.3], [0.3, 0.5]])
        w = kernel_weights(spec, [0.0, 0.0], pts)
        assert np.all(w > 0)
        assert np.all(w <= 1.0)
        assert kernel_weights(spec, [0.0, 0.0], [[0.0, 0.0]])[0] == 1.0
        assert np.all(w[np.any(pts != 0, axis=1)] < 1.0)


class TestPredictors:
    def test_independent_case(self):
        X = simulate_predictors(100000, 5, 0.0, seed=4)
        assert np.allclose(np.corrcoef(X.T), np.eye(5), atol=0.02)

    def test_strong_correlation(self):
        C = np.corrcoef(simulate_predictors(100000, 5, 0.9, seed=5).T)
        off = C[~np.eye(5, dtype=bool)]
        assert np.all(np.abs(off - 0.9) < 0.02)

    def test_partial_block(self):
        omega = block_correlation(7, 0.5)
        assert omega[5, 6] == 0.5 and omega[4, 5] == 0.0 and omega[0, 4] == 0.5
        assert np.all(np.linalg.eigvalsh(omega) > 0)

    @given(st.integers(1, 23), st.floats(0, 0.99))
    def test_valid_correlation(self, k, rho):
        omega = block_correlation(k, rho)
        assert np.array_equal(np.diag(omega), np.ones(k))
        assert np.min(np.linalg.eigvalsh(omega)) > -1e-12

    def test_rho_range(self):
        with pytest.raises(ValueError):
            block_correlation(5, 1.0)


class TestPosterior:
    def test_approaches_least_squares(self):
        rng = make_rng(9)
        X = rng.standard_normal((1024, 5))
        y = X @ np.array([-0.1, -0.2, 1.3, 1.4, 1.5]) + rng.standard_normal(1024)
        theta, sigma2 = conjugate_gaussian_posterior(X, y, n_draws=4000, seed=1)
        ols, _ = normal_equations(X, y, intercept=False)
        assert np.allclose(theta.mean(axis=1), ols, atol=1e-2)
        assert sigma2.mean() == pytest.approx(1.0, abs=0.15)

    def test_no_data_gives_prior(self):
        theta, sigma2 = conjugate_gaussian_posterior(np.zeros((0, 2)), np.zeros(0), ig_shape=3.0,
                                                     ig_rate=2.0, n_draws=50000, seed=2)
        # InvGamma(3, 2) has mean 1; theta | sigma2 ~ N(0, sigma2) has variance E[sigma2]
        assert sigma2.mean() == pytest.approx(1.0, abs=0.03)
        assert np.allclose(theta.mean(axis=1), 0.0, atol=0.03)
        assert np.allclose(theta.var(axis=1), 1.0, atol=0.05)

    def test_shapes(self, rng):
        theta, sigma2 = conjugate_gaussian_posterior(rng.normal(size=(30, 4)), rng.normal(size=30),
                                                     n_draws=7)
        assert theta.shape == (4, 7) and sigma2.shape == (7,) and np.all(sigma2 > 0)

    def test_shape_error(self):
        with pytest.raises(ShapeMismatchError):
            conjugate_gaussian_posterior(np.zeros((3, 2)), np.zeros(4))


def test_generator_is_reproducible():
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        assert make_rng(5).random() == make_rng(5).random()
