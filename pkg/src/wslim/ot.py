"""Optimal transport between equal-size, uniformly weighted empirical clouds.

A cloud is a ``(T, N)`` array: one row per atom (posterior or bootstrap
draw), one column per observation. Prediction ensembles elsewhere in the
package are stored ``(N, T)``; :func:`ensemble_distance` does the
transposition.

With uniform weights ``1/T`` on both sides the optimal coupling is a
permutation matrix scaled by ``1/T``, so every solver here returns a
permutation plan.
"""

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist

from ._validation import (
    ShapeMismatchError,
    UnsupportedDimensionError,
    as_matrix,
    check_order,
)

SOLVERS = ("exact", "hilbert", "rank1d")
GROUND_METRICS = ("euclidean", "lp")
HILBERT_BITS = 16


@dataclass(frozen=True)
class TransportPlan:
    """Permutation coupling between two clouds of ``T`` atoms.

    ``assignment[t]`` is the atom of the second cloud matched with atom ``t``
    of the first; ``objective`` is the transport cost
    ``sum_t cost[t, assignment[t]] / T`` (the p-th power of the distance).
    """

    assignment: np.ndarray
    objective: float
    solver: str

    @property
    def size(self):
        return self.assignment.shape[0]

    @property
    def gamma(self):
        T = self.size
        g = np.zeros((T, T))
        g[np.arange(T), self.assignment] = 1.0 / T
        return g

    def marginal_residuals(self):
        """Largest absolute row and column marginal violations."""
        g = self.gamma
        target = 1.0 / self.size
        return (float(np.max(np.abs(g.sum(axis=1) - target))),
                float(np.max(np.abs(g.sum(axis=0) - target))))


def _check_pair(a, b):
    a = as_matrix(a, name="a")
    b = as_matrix(b, name="b")
    if a.shape != b.shape:
        raise ShapeMismatchError("cloud shapes (atoms x dimension)", a.shape, b.shape)
    return a, b


def cost_matrix(a, b, p=2.0, ground="euclidean"):
    """Pairwise ground cost ``d(a_t, b_s) ** p`` between the rows of two clouds.

    ``ground="euclidean"`` uses the Euclidean norm on R^N; ``ground="lp"``
    uses the separable ``sum_i |a_ti - b_si| ** p``.
    """
    a, b = _check_pair(a, b)
    p = check_order(p)
    if ground == "euclidean":
        cost = cdist(a, b, metric="euclidean") ** p
    elif ground == "lp":
        cost = cdist(a, b, metric="minkowski", p=p) ** p
    else:
        raise ValueError(f"unknown ground metric {ground!r}; choose from {GROUND_METRICS}")
    if not np.all(np.isfinite(cost)):
        raise ValueError("cost matrix has non-finite entries")
    return cost


def _pair_costs(a, b, assignment, p, ground):
    diff = a - b[assignment]
    if ground == "euclidean":
        return np.sqrt(np.einsum("ij,ij->i", diff, diff)) ** p
    return np.sum(np.abs(diff) ** p, axis=1)


def _objective(a, b, assignment, p, ground):
    return float(np.sum(_pair_costs(a, b, assignment, p, ground)) / a.shape[0])


def exact_plan(a, b, p=2.0, ground="euclidean"):
    """Exact optimal plan, solved as a linear assignment problem."""
    a, b = _check_pair(a, b)
    cost = cost_matrix(a, b, p, ground)
    rows, cols = linear_sum_assignment(cost)
    assignment = np.empty(a.shape[0], dtype=np.intp)
    assignment[rows] = cols
    return TransportPlan(assignment, _objective(a, b, assignment, p, ground), "exact")


def rank1d_plan(a, b, p=2.0, ground="euclidean"):
    """Match order statistics; exact for one-dimensional clouds and any p >= 1."""
    a, b = _check_pair(a, b)
    p = check_order(p)
    if a.shape[1] != 1:
        raise UnsupportedDimensionError(
            f"rank1d solver needs one-dimensional atoms, got dimension {a.shape[1]}")
    order_a = np.argsort(a[:, 0], kind="stable")
    order_b = np.argsort(b[:, 0], kind="stable")
    assignment = np.empty(a.shape[0], dtype=np.intp)
    assignment[order_a] = order_b
    return TransportPlan(assignment, _objective(a, b, assignment, p, ground), "rank1d")


def _hilbert_transpose(coords, bits):
    """Skilling's axes-to-transpose Hilbert transform, vectorised over points.

    ``coords`` is ``(n_dims, n_points)`` of unsigned integers below ``2**bits``.
    """
    X = coords.copy()
    n = X.shape[0]
    M = np.uint64(1) << np.uint64(bits - 1)
    Q = M
    one = np.uint64(1)
    while Q > one:
        P = Q - one
        for i in range(n):
            hit = (X[i] & Q) != 0
            X[0, hit] ^= P
            miss = ~hit
            t = (X[0, miss] ^ X[i, miss]) & P
            X[0, miss] ^= t
            X[i, miss] ^= t
        Q >>= one
    for i in range(1, n):
        X[i] ^= X[i - 1]
    t = np.zeros(X.shape[1], dtype=np.uint64)
    Q = M
    while Q > one:
        hit = (X[n - 1] & Q) != 0
        t[hit] ^= Q - one
        Q >>= one
    X ^= t
    return X


def hilbert_order(points, lo=None, hi=None, bits=HILBERT_BITS):
    """Indices that sort ``points`` (rows) along a Hilbert curve.

    Coordinates are min-max scaled with ``lo``/``hi`` (default: the points'
    own range) and quantised to ``bits`` bits. Ties keep the original order.
    """
    points = as_matrix(points, name="points")
    lo = points.min(axis=0) if lo is None else np.asarray(lo, dtype=float)
    hi = points.max(axis=0) if hi is None else np.asarray(hi, dtype=float)
    span = np.where(hi > lo, hi - lo, 1.0)
    unit = np.clip((points - lo) / span, 0.0, 1.0)
    top = (1 << bits) - 1
    q = np.floor(unit * top).astype(np.uint64).T
    h = _hilbert_transpose(q, bits)
    # Key digits, most significant first: bit b of dimension 0, 1, ... for b high to low.
    digits = [(h[i] >> np.uint64(b)) & np.uint64(1)
              for b in range(bits - 1, -1, -1) for i in range(h.shape[0])]
    # lexsort treats the last key as primary and is stable.
    return np.lexsort(digits[::-1])


def hilbert_plan(a, b, p=2.0, ground="euclidean"):
    """Approximate plan pairing the clouds' atoms in Hilbert-curve order.

    Both clouds are quantised on their joint bounding box. In one dimension
    the curve order is the sort order, so this coincides with
    :func:`rank1d_plan`.
    """
    a, b = _check_pair(a, b)
    p = check_order(p)
    if a.shape[1] == 1:
        plan = rank1d_plan(a, b, p, ground)
        return TransportPlan(plan.assignment, plan.objective, "hilbert")
    joint = np.vstack([a, b])
    lo, hi = joint.min(axis=0), joint.max(axis=0)
    order_a = hilbert_order(a, lo, hi)
    order_b = hilbert_order(b, lo, hi)
    assignment = np.empty(a.shape[0], dtype=np.intp)
    assignment[order_a] = order_b
    return TransportPlan(assignment, _objective(a, b, assignment, p, ground), "hilbert")


_PLANNERS = {"exact": exact_plan, "hilbert": hilbert_plan, "rank1d": rank1d_plan}


def transport_plan(a, b, p=2.0, solver="exact", ground="euclidean"):
    try:
        planner = _PLANNERS[solver]
    except KeyError:
        raise ValueError(f"unknown solver {solver!r}; choose from {SOLVERS}") from None
    return planner(a, b, p, ground)


def wasserstein_distance(a, b, p=2.0, solver="exact", ground="euclidean"):
    """p-Wasserstein distance between two clouds given as ``(T, N)`` arrays."""
    plan = transport_plan(a, b, p, solver, ground)
    return max(plan.objective, 0.0) ** (1.0 / float(p))


def auto_solver(n_obs, n_draws, exact_limit=512):
    """Solver used by the search routines: rank1d in 1-D, exact up to ``exact_limit`` atoms."""
    if n_obs == 1:
        return "rank1d"
    return "exact" if n_draws <= exact_limit else "hilbert"


def ensemble_plan(mu, nu, p=2.0, solver="auto", ground="euclidean"):
    """Plan between two ``(N, T)`` prediction ensembles (atoms are the columns)."""
    mu = as_matrix(mu, name="mu")
    nu = as_matrix(nu, name="nu")
    if mu.shape != nu.shape:
        raise ShapeMismatchError("ensemble shapes (observations x draws)", mu.shape, nu.shape)
    if solver == "auto":
        solver = auto_solver(*mu.shape)
    return transport_plan(mu.T, nu.T, p, solver, ground)


def ensemble_distance(mu, nu, p=2.0, solver="auto", ground="euclidean"):
    plan = ensemble_plan(mu, nu, p, solver, ground)
    return max(plan.objective, 0.0) ** (1.0 / float(p))
