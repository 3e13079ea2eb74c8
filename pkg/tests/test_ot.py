import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oracles import brute_force_ot
from wslim._validation import ShapeMismatchError, UnsupportedDimensionError
from wslim.ot import (
    cost_matrix,
    ensemble_distance,
    exact_plan,
    hilbert_order,
    hilbert_plan,
    rank1d_plan,
    transport_plan,
    wasserstein_distance,
)

# drawn once from a seeded generator; the distance comes from permutation enumeration
FIXTURE_A = [[-1.424, 1.264, -0.871], [-0.259, -0.075, -0.741], [-1.368, 0.649, 0.361],
             [-1.953, 2.347, 0.968], [-0.759, 0.902, -0.467]]
FIXTURE_B = [[-0.061, 0.789, -1.257], [0.576, 1.399, 1.322], [-0.3, 0.903, -1.622],
             [-0.158, 0.449, -1.344], [-0.082, 1.725, 2.618]]
FIXTURE_W2 = 1.766654408762506

# a 0.01 grid keeps squared differences clear of underflow
finite = st.integers(-5000, 5000).map(lambda v: v / 100.0)


def clouds(T, N):
    return arrays(np.float64, (T, N), elements=finite)


@st.composite
def cloud_pair(draw, max_T=6, max_N=3):
    T = draw(st.integers(1, max_T))
    N = draw(st.integers(1, max_N))
    return draw(clouds(T, N)), draw(clouds(T, N))


class TestExactPlan:
    def test_single_atom(self):
        plan = exact_plan([[1.0, 2.0]], [[4.0, 6.0]], p=2)
        assert np.array_equal(plan.gamma, [[1.0]])
        assert plan.objective == pytest.approx(25.0, abs=1e-12)

    def test_identical_clouds(self, rng):
        a = rng.normal(size=(6, 3))
        plan = exact_plan(a, a)
        assert plan.objective == 0.0
        assert np.allclose(plan.gamma, np.eye(6) / 6)

    def test_matches_permutation_enumeration(self, rng):
        for _ in range(10):
            a, b = rng.normal(size=(5, 3)), rng.normal(size=(5, 3))
            assert exact_plan(a, b, 2).objective == pytest.approx(brute_force_ot(a, b, 2), abs=1e-12)

    def test_frozen_fixture(self):
        assert wasserstein_distance(FIXTURE_A, FIXTURE_B, 2) == pytest.approx(FIXTURE_W2, abs=1e-12)

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(ShapeMismatchError) as err:
            exact_plan(np.zeros((3, 2)), np.zeros((4, 2)))
        assert "(3, 2)" in str(err.value) and "(4, 2)" in str(err.value)

    def test_non_finite_input(self):
        with pytest.raises(ValueError):
            exact_plan([[np.inf]], [[0.0]])

    def test_infinite_order_rejected(self):
        with pytest.raises(ValueError):
            exact_plan([[0.0]], [[1.0]], p=np.inf)

    def test_objective_is_plan_cost(self, rng):
        a, b = rng.normal(size=(7, 2)), rng.normal(size=(7, 2))
        plan = exact_plan(a, b, 3)
        assert plan.objective == pytest.approx(float(np.sum(cost_matrix(a, b, 3) * plan.gamma)),
                                               rel=1e-12)

    def test_lp_ground_metric(self, rng):
        a, b = rng.normal(size=(4, 3)), rng.normal(size=(4, 3))
        plan = exact_plan(a, b, 1, ground="lp")
        cost = np.abs(a[:, None, :] - b[None, :, :]).sum(axis=2)
        assert plan.objective == pytest.approx(cost[np.arange(4), plan.assignment].mean())


class TestRank1d:
    def test_two_point_example(self):
        assert rank1d_plan([[0.0], [1.0]], [[1.0], [2.0]], p=1).objective == pytest.approx(1.0)

    def test_identical(self):
        assert rank1d_plan([[3.0], [1.0]], [[3.0], [1.0]]).objective == 0.0

    def test_permutation_invariance(self):
        assert rank1d_plan([[3.0], [-1.0], [2.0]], [[2.0], [3.0], [-1.0]]).objective == 0.0

    def test_rejects_multivariate(self):
        with pytest.raises(UnsupportedDimensionError):
            rank1d_plan(np.zeros((3, 2)), np.zeros((3, 2)))


class TestHilbert:
    def test_one_dimension_is_sorting(self, rng):
        a, b = rng.normal(size=(9, 1)), rng.normal(size=(9, 1))
        h, r = hilbert_plan(a, b), rank1d_plan(a, b)
        assert np.array_equal(h.assignment, r.assignment)
        assert h.objective == r.objective

    def test_identical(self, rng):
        a = rng.normal(size=(6, 2))
        assert hilbert_plan(a, a).objective == pytest.approx(0.0, abs=1e-15)

    def test_not_better_than_exact(self, rng):
        a, b = rng.normal(size=(6, 2)), rng.normal(size=(6, 2))
        gap = hilbert_plan(a, b).objective - exact_plan(a, b).objective
        assert gap >= -1e-12

    def test_curve_order_on_grid(self):
        # the order-1 curve visits the four quadrant corners in a U
        pts = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
        order = hilbert_order(pts)
        steps = np.abs(np.diff(pts[order], axis=0)).sum(axis=1)
        assert np.all(steps == 1.0)


class TestDistance:
    def test_single_draw_zero(self):
        assert wasserstein_distance([[1.0, 2.0]], [[1.0, 2.0]]) == 0.0

    def test_single_draw_euclidean(self):
        assert wasserstein_distance([[0.0, 0.0]], [[3.0, 4.0]]) == pytest.approx(5.0, abs=1e-15)

    def test_enumeration_root(self, rng):
        a, b = rng.normal(size=(4, 2)), rng.normal(size=(4, 2))
        assert wasserstein_distance(a, b, 2) == pytest.approx(brute_force_ot(a, b, 2) ** 0.5,
                                                              abs=1e-12)

    def test_unknown_solver(self):
        with pytest.raises(ValueError):
            transport_plan([[0.0]], [[1.0]], solver="simplex")

    def test_ensemble_orientation(self, rng):
        mu, nu = rng.normal(size=(3, 5)), rng.normal(size=(3, 5))
        assert ensemble_distance(mu, nu, solver="exact") == wasserstein_distance(mu.T, nu.T)

    def test_auto_solver_one_observation(self, rng):
        mu, nu = rng.normal(size=(1, 8)), rng.normal(size=(1, 8))
        assert ensemble_distance(mu, nu) == pytest.approx(wasserstein_distance(mu.T, nu.T),
                                                          abs=1e-12)


@given(cloud_pair())
def test_symmetry(pair):
    a, b = pair
    assert abs(wasserstein_distance(a, b) - wasserstein_distance(b, a)) <= 1e-10


@given(st.integers(1, 5), st.integers(1, 3), st.data())
def test_triangle_inequality(T, N, data):
    a, b, c = (data.draw(clouds(T, N)) for _ in range(3))
    for p in (1.0, 2.0, 3.0):
        ab, bc, ac = (wasserstein_distance(x, y, p) for x, y in ((a, b), (b, c), (a, c)))
        assert ac <= ab + bc + 1e-9 * (1 + ab + bc)


@given(cloud_pair())
def test_identity_of_indiscernibles(pair):
    a, b = pair
    d = wasserstein_distance(a, b)
    same = sorted(map(tuple, a)) == sorted(map(tuple, b))
    assert (d == 0) == same


@given(cloud_pair(), st.sampled_from(["exact", "hilbert"]))
def test_plan_feasibility(pair, solver):
    a, b = pair
    plan = transport_plan(a, b, 2, solver)
    g = plan.gamma
    T = a.shape[0]
    assert np.all(g >= 0)
    assert max(plan.marginal_residuals()) <= 1e-12
    assert np.array_equal(np.count_nonzero(g, axis=0), np.ones(T))
    assert np.array_equal(np.count_nonzero(g, axis=1), np.ones(T))


@given(cloud_pair(max_N=1), st.sampled_from([1.0, 2.0, 3.0]))
def test_rank1d_equals_exact(pair, p):
    a, b = pair
    assert abs(rank1d_plan(a, b, p).objective - exact_plan(a, b, p).objective) <= 1e-12 * (
        1 + exact_plan(a, b, p).objective)


@given(cloud_pair(), st.floats(0.01, 100))
def test_homogeneity(pair, c):
    a, b = pair
    d = wasserstein_distance(a, b)
    assert wasserstein_distance(c * a, c * b) == pytest.approx(c * d, rel=1e-9, abs=1e-9)


@given(st.integers(1, 7), st.integers(1, 3), st.data())
def test_permutation_optimum_small(T, N, data):
    a, b = data.draw(clouds(T, N)), data.draw(clouds(T, N))
    assert exact_plan(a, b).objective == pytest.approx(brute_force_ot(a, b), rel=1e-10, abs=1e-10)
