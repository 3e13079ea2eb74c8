import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from sklearn.base import clone

from oracles import ensemble_w, mask_search_oracle
from wslim.ensemble import Neighborhood, ParameterDraws, point_neighborhood, predict_linear
from wslim.ot import exact_plan
from wslim.simulate import toy_data
from wslim.slim_p import (
    DivergenceError,
    SelectionMask,
    SlimP,
    SufficientStatistics,
    build_stats,
    direct_loss,
    masked_distance,
    quadratic_slim_p,
    relaxed_lambda_max,
    selection_order,
    solve_exact_mask,
    solve_relaxed_mask,
)


def random_coupling(rng, T):
    """A feasible (not necessarily permutation) coupling: mixture of permutation plans."""
    g = np.zeros((T, T))
    mix = rng.dirichlet(np.ones(3))
    for m in mix:
        g[np.arange(T), rng.permutation(T)] += m / T
    return g


def instance(rng, N, k, T, noise=0.5, weights=False):
    Z = rng.normal(size=(N, k))
    theta = rng.normal(size=(k, T))
    mu = Z @ theta + noise * rng.normal(size=(N, T))
    w = rng.uniform(0.2, 2.0, size=N) if weights else np.ones(N)
    return Neighborhood(Z, Z[0], w), ParameterDraws(theta), mu


class TestStatistics:
    def test_single_covariate(self, rng):
        N, T = 4, 6
        z = rng.normal(size=(N, 1))
        theta = rng.normal(size=(1, T))
        mu = rng.normal(size=(N, T))
        st_ = build_stats(z, theta, mu, np.eye(T) / T)
        assert st_.S_zz[0, 0] == pytest.approx(np.sum(z ** 2) * np.sum(theta ** 2) / (N * T), rel=1e-14)

    @pytest.mark.parametrize("intercept", [False, True])
    @pytest.mark.parametrize("weights", [False, True])
    def test_identity_with_direct_loss(self, intercept, weights):
        rng = np.random.default_rng(99)
        worst = 0.0
        for _ in range(100):
            k, T, N = rng.integers(1, 7), rng.integers(1, 9), rng.integers(1, 6)
            nb, draws, mu = instance(rng, N, k, T, weights=weights)
            if intercept:
                draws = ParameterDraws(draws.theta, rng.normal(size=T))
            gamma = random_coupling(rng, T)
            stats = build_stats(nb, draws, mu, gamma)
            alpha = rng.integers(0, 2, size=k)
            quad = stats.objective(alpha, include_const=True)
            direct = direct_loss(nb, draws, mu, gamma, alpha)
            worst = max(worst, abs(quad - direct) / max(abs(direct), 1e-300))
        assert worst < 1e-8

    def test_weighted_least_squares_collapse(self, rng):
        # constant draws and the identity coupling: moments of an ordinary weighted regression
        N, k, T = 7, 3, 4
        Z = rng.normal(size=(N, k))
        c = rng.normal(size=k)
        theta = np.repeat(c[:, None], T, axis=1)
        y = rng.normal(size=N)
        mu = np.repeat(y[:, None], T, axis=1)
        w = rng.uniform(0.5, 2, size=N)
        stats = build_stats(Neighborhood(Z, Z[0], w), theta, mu, np.eye(T) / T)
        D = Z * c
        assert np.allclose(stats.S_zz, D.T @ (w[:, None] * D) / N, atol=1e-13)
        assert np.allclose(stats.S_zmu, D.T @ (w * y) / N, atol=1e-13)
        assert stats.const_term == pytest.approx(w @ y ** 2 / N, rel=1e-13)

    def test_psd(self, rng):
        nb, draws, mu = instance(rng, 5, 6, 8)
        S = build_stats(nb, draws, mu, np.eye(8) / 8).S_zz
        assert np.allclose(S, S.T, atol=1e-12)
        assert np.min(np.linalg.eigvalsh(S)) > -1e-8

    def test_plan_object_accepted(self, rng):
        nb, draws, mu = instance(rng, 3, 2, 5)
        plan = exact_plan(mu.T, predict_linear(nb.points, draws).T)
        a = build_stats(nb, draws, mu, plan)
        b = build_stats(nb, draws, mu, plan.gamma)
        assert np.array_equal(a.S_zmu, b.S_zmu)

    def test_bad_plan_shape(self, rng):
        nb, draws, mu = instance(rng, 3, 2, 5)
        with pytest.raises(ValueError):
            build_stats(nb, draws, mu, np.eye(4) / 4)


@given(st.integers(1, 6), st.integers(1, 8), st.integers(1, 5), st.integers(0, 2 ** 32 - 1))
def test_identity_property(k, T, N, seed):
    rng = np.random.default_rng(seed)
    nb, draws, mu = instance(rng, N, k, T, weights=True)
    gamma = random_coupling(rng, T)
    alpha = rng.integers(0, 2, size=k)
    stats = build_stats(nb, draws, mu, gamma)
    direct = direct_loss(nb, draws, mu, gamma, alpha)
    assert stats.objective(alpha, True) == pytest.approx(direct, rel=1e-8, abs=1e-12)


class TestExactMask:
    def test_generating_model_is_optimal(self, rng):
        nb, draws, mu = instance(rng, 4, 5, 6, noise=0.0)
        plan = exact_plan(mu.T, predict_linear(nb.points, draws).T)
        stats = build_stats(nb, draws, mu, plan)
        mask = solve_exact_mask(stats, 5)
        assert mask.alpha.tolist() == [1] * 5

    def test_zero_budget(self, rng):
        nb, draws, mu = instance(rng, 4, 5, 6)
        stats = build_stats(nb, draws, mu, np.eye(6) / 6)
        mask = solve_exact_mask(stats, 0)
        assert mask.size == 0 and stats.objective(mask.alpha) == 0.0

    def test_branch_and_bound_agrees(self, rng):
        for _ in range(15):
            nb, draws, mu = instance(rng, 3, 8, 6, noise=1.0)
            stats = build_stats(nb, draws, mu, random_coupling(rng, 6))
            for budget in (1, 3, 5, 8):
                a = solve_exact_mask(stats, budget)
                b = solve_exact_mask(stats, budget, enumeration_cap=0)
                assert stats.objective(b.alpha) == pytest.approx(stats.objective(a.alpha),
                                                                 rel=1e-12, abs=1e-14)

    def test_invalid_budget(self, rng):
        stats = SufficientStatistics(np.eye(3), np.ones(3), 0.0)
        with pytest.raises(ValueError):
            solve_exact_mask(stats, 4)
        with pytest.raises(ValueError):
            solve_exact_mask(stats, -1)

    def test_toy_budget_one(self):
        d = toy_data(0.5, seed=0)
        res = quadratic_slim_p(point_neighborhood(d.center), d.draws, d.mu, "exact", budgets=[1])
        assert res[0].mask.active == (1,)

    def test_mask_validation(self):
        with pytest.raises(ValueError):
            SelectionMask(np.array([0, 2]))
        with pytest.raises(ValueError):
            SelectionMask(np.array([1, 1, 0]), budget=1)


class TestRelaxedMask:
    def test_decoupled_quadratic(self):
        s = np.array([0.2, 0.7, -0.3, 1.4])
        sol = solve_relaxed_mask(SufficientStatistics(np.eye(4), s, 0.0), 0.0)
        assert np.allclose(sol.alpha, s, atol=1e-12)
        assert sol.mask.alpha.tolist() == [0, 1, 0, 1]

    def test_large_penalty(self, rng):
        nb, draws, mu = instance(rng, 4, 5, 6)
        stats = build_stats(nb, draws, mu, np.eye(6) / 6)
        sol = solve_relaxed_mask(stats, relaxed_lambda_max(stats) * 1.01)
        assert not sol.alpha.any() and sol.mask.size == 0

    def test_lasso_kkt(self, rng):
        nb, draws, mu = instance(rng, 3, 6, 8)
        stats = build_stats(nb, draws, mu, np.eye(8) / 8)
        lam = 0.1 * relaxed_lambda_max(stats)
        a = solve_relaxed_mask(stats, lam).alpha
        g = 2 * (stats.S_zz @ a - stats.S_zmu)
        on = a != 0
        assert np.allclose(g[on] + lam * np.sign(a[on]), 0, atol=1e-8)
        assert np.all(np.abs(g[~on]) <= lam * (1 + 1e-8))

    @pytest.mark.parametrize("family,box", [("group-lasso", True), ("group-mcp", False),
                                            ("group-mcp", True)])
    def test_history_non_increasing(self, rng, family, box):
        nb, draws, mu = instance(rng, 3, 6, 8)
        stats = build_stats(nb, draws, mu, np.eye(8) / 8)
        sol = solve_relaxed_mask(stats, 0.05 * relaxed_lambda_max(stats), family, box=box)
        assert np.all(np.diff(sol.history) <= 1e-12)
        if box:
            assert np.all((sol.alpha >= 0) & (sol.alpha <= 1))

    def test_divergence_guard(self):
        # an indefinite "statistic" makes the program unbounded below
        stats = SufficientStatistics(np.array([[1.0, 3.0], [3.0, 1.0]]), np.array([1.0, 1.0]), 0.0)
        with pytest.raises(DivergenceError):
            solve_relaxed_mask(stats, 0.0, max_sweeps=5000)

    def test_toy_relaxed_order(self):
        d = toy_data(0.5, seed=0)
        res = quadratic_slim_p(point_neighborhood(d.center), d.draws, d.mu, "relaxed")
        order = selection_order(res)
        assert set(order[:2]) == {0, 1}
        assert order[2:] == [4, 3, 2]


class TestAlternation:
    def test_exact_representability(self, rng):
        nb, draws, mu = instance(rng, 4, 5, 8, noise=0.0)
        res = quadratic_slim_p(nb, draws, mu, "exact", budgets=[5])
        e = res[0]
        assert e.n_iter <= 2 and e.w2_distance < 1e-10

    def test_single_observation(self, rng):
        theta = rng.normal(size=(3, 10))
        x0 = np.array([1.0, -2.0, 0.5])
        mu = predict_linear(x0[None, :], theta) + 0.1 * rng.normal(size=(1, 10))
        res = quadratic_slim_p(point_neighborhood(x0), theta, mu, "exact")
        assert [e.budget for e in res] == [0, 1, 2, 3]
        assert res[3].w2_distance <= res[0].w2_distance

    def test_bounded_by_enumeration(self):
        # a local method: never below the global optimum, and exact at the extremes
        rng = np.random.default_rng(6)
        nb, draws, mu = instance(rng, 3, 6, 8, noise=0.3)
        res = quadratic_slim_p(nb, draws, mu, "exact")
        for e in res:
            best = mask_search_oracle(nb.points, draws.theta, mu, e.budget)
            assert e.w2_distance >= best - 1e-10
        for budget in (0, 6):
            best = mask_search_oracle(nb.points, draws.theta, mu, budget)
            assert res.by_budget(budget).w2_distance == pytest.approx(best, abs=1e-10)

    def test_realised_loss_non_increasing(self, rng):
        # after the first round each mask is optimal for the previous plan
        for _ in range(5):
            nb, draws, mu = instance(rng, 3, 6, 8, noise=1.0)
            for e in quadratic_slim_p(nb, draws, mu, "exact", budgets=[2, 4]):
                assert np.all(np.diff(e.history) <= 1e-12)
                assert e.w2_distance == pytest.approx(min(e.history), abs=1e-12)

    def test_masks_preserve_coefficients(self, rng):
        nb, draws, mu = instance(rng, 3, 5, 6)
        for e in quadratic_slim_p(nb, draws, mu, "exact"):
            on = e.mask.alpha.astype(bool)
            assert np.array_equal(e.coef.beta[on], draws.theta[on])
            assert not e.coef.beta[~on].any()

    def test_reported_distance_recomputes(self, rng):
        nb, draws, mu = instance(rng, 3, 5, 6, weights=True)
        for e in quadratic_slim_p(nb, draws, mu, "exact"):
            ref = ensemble_w(mu, e.coef.predict(nb.points), 2.0, nb.weights)
            assert e.w2_distance == pytest.approx(ref, abs=1e-8)

    def test_relaxed_mode_default_grid(self, rng):
        nb, draws, mu = instance(rng, 3, 4, 6)
        res = quadratic_slim_p(nb, draws, mu, "relaxed")
        assert len(res) == 100
        assert res[0].mask.size == 0
        lams = [e.lam for e in res]
        assert all(b < a for a, b in zip(lams, lams[1:]))

    def test_unknown_mode(self, rng):
        nb, draws, mu = instance(rng, 3, 4, 6)
        with pytest.raises(ValueError):
            quadratic_slim_p(nb, draws, mu, "greedy")

    def test_shape_checks(self, rng):
        nb, draws, mu = instance(rng, 3, 4, 6)
        with pytest.raises(ValueError):
            quadratic_slim_p(nb, draws, mu[:, :5])


class TestEstimator:
    def test_fit_predict(self, rng):
        nb, draws, mu = instance(rng, 4, 4, 6, noise=0.0)
        est = SlimP(budget=4).fit(nb.points, mu, draws.theta)
        assert est.mask_.size == 4
        assert np.allclose(est.predict(nb.points), mu)

    def test_budget_respected(self, rng):
        nb, draws, mu = instance(rng, 4, 4, 6, noise=0.5)
        est = SlimP(budget=2).fit(nb.points, mu, draws.theta)
        assert est.mask_.size <= 2

    def test_requires_theta(self, rng):
        with pytest.raises(ValueError):
            SlimP().fit(rng.normal(size=(3, 2)), rng.normal(size=(3, 4)))

    def test_clone(self):
        est = SlimP(mode="relaxed", box=True)
        assert clone(est).get_params() == est.get_params()
