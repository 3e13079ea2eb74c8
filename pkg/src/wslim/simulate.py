"""Simulation harnesses: the five-covariate toy problem and the quadratic-linear Gaussian scenario.

Every replicate is driven by one integer seed, split into independent
Philox streams for predictors, outcomes, posterior draws, the test point
and the neighborhood.
"""

from dataclasses import dataclass

import numpy as np

from .ensemble import (
    Neighborhood,
    ParameterDraws,
    block_correlation,
    conjugate_gaussian_posterior,
    empirical_covariance,
    gaussian_neighborhood,
    make_rng,
    point_neighborhood,
    predict_linear,
    simulate_predictors,
)
from .metrics import relative_mse, wasserstein_r2
from .search import best_subsets
from .slim_a import PenaltyConfig, fit_slim_a
from .slim_p import quadratic_slim_p

TOY_THETA = (-0.1, -0.2, 1.3, 1.4, 1.5)
TOY_CENTER = (100.0, 90.0, 0.01, 0.01, 0.01)
# master seed for the one-off draw of the Gaussian scenario's raw coefficients
XI_SEED = 20210
XI_RANGES = ([(1.0, 2.0)] + [(1.0, 2.0)] * 5 + [(-2.0, -1.0)] * 5 + [(0.0, 0.5)] * 5
             + [(-0.5, 0.0)] * 5 + [(0.0, 0.5)] * 4)
# zero-based columns: squares of x1, x3, x7 and the product x13 * x15
SQUARED = (0, 2, 6)
PRODUCT = (12, 14)


def _streams(seed, n):
    return [make_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]


@dataclass(frozen=True)
class ToyData:
    X: np.ndarray
    y: np.ndarray
    draws: ParameterDraws
    sigma2: np.ndarray
    center: np.ndarray
    mu: np.ndarray
    neighborhood: Neighborhood


def toy_data(rho=0.5, seed=0, n=1024, n_draws=100, neighborhood_size=100):
    """Predictors, outcomes, posterior draws and the extreme test point of the toy problem.

    ``mu`` holds the predictions at the test point (shape (1, T));
    ``neighborhood`` is a Gaussian cloud around it for the agnostic fit.
    """
    s_x, s_y, s_post, s_nb = _streams(seed, 4)
    theta = np.array(TOY_THETA)
    X = simulate_predictors(n, len(theta), rho, seed=s_x)
    y = X @ theta + s_y.standard_normal(n)
    draws, sigma2 = conjugate_gaussian_posterior(X, y, 1.0, 1.0, 1.0, n_draws, seed=s_post)
    draws = ParameterDraws(draws)
    center = np.array(TOY_CENTER)
    mu = predict_linear(center[None, :], draws)
    nb = gaussian_neighborhood(center, empirical_covariance(X), n, neighborhood_size, seed=s_nb)
    return ToyData(X, y, draws, sigma2, center, mu, nb)


def run_toy(rho=0.5, seed=0, n=1024, n_draws=100, solver="auto", penalty=None):
    """Model-preserving searches at the test point and an agnostic path on its neighborhood.

    The toy model has no intercept, so its null surrogate is the all-zero
    ensemble.
    """
    data = toy_data(rho, seed, n, n_draws)
    k = data.draws.n_features
    point = point_neighborhood(data.center)
    zero = np.zeros_like(data.mu)
    rows = []
    bs = best_subsets(point, data.draws, data.mu, "fixed", 2.0, solver)
    for e in bs:
        nu = e.coef.predict(point.points)
        rows.append({"method": "best-subsets", "size": e.size, "active": list(e.active),
                     "w2": e.distance, "w2_r2": wasserstein_r2(data.mu, nu, zero)})
    exact = quadratic_slim_p(point, data.draws, data.mu, "exact", budgets=range(1, k),
                             solver=solver)
    for e in exact:
        nu = e.coef.predict(point.points)
        rows.append({"method": "binary-program", "size": e.mask.size,
                     "active": list(e.mask.active), "w2": e.w2_distance,
                     "w2_r2": wasserstein_r2(data.mu, nu, zero)})
    pen = penalty or PenaltyConfig("group-mcp", mcp_gamma=1.5, l1_ratio=0.99)
    path = fit_slim_a(predict_linear(data.neighborhood.points, data.draws), data.neighborhood, pen)
    for j, e in enumerate(path.by_size(k)):
        if e is None or j == 0:
            continue
        rows.append({"method": "slim-a", "size": j, "active": list(e.coef.active_groups),
                     "w2": e.w2_distance, "w2_r2": e.w2_r2})
    return {"scenario": "toy", "rho": rho, "seed": seed, "rows": rows,
            "inclusion_order": bs.inclusion_order()}


def gaussian_xi(seed=XI_SEED):
    """Raw coefficients ``(xi_0, ..., xi_24)`` drawn once from their uniform ranges."""
    rng = make_rng(seed)
    lo, hi = np.array(XI_RANGES).T
    return lo + (hi - lo) * rng.random(len(XI_RANGES))


def quadratic_features(X):
    """``(x, x1^2, x3^2, x7^2, x13 x15)`` for each row of ``X`` (at least 15 columns)."""
    X = np.asarray(X, dtype=np.float64)
    extra = [X[:, j] ** 2 for j in SQUARED] + [X[:, PRODUCT[0]] * X[:, PRODUCT[1]]]
    return np.column_stack([X] + extra)


def feature_covariance(omega):
    """Exact covariance of :func:`quadratic_features` under ``x ~ N(0, omega)``.

    Odd moments vanish, so linear and quadratic blocks are uncorrelated;
    the quadratic block follows from Isserlis' theorem.
    """
    omega = np.asarray(omega, dtype=np.float64)
    k = omega.shape[0]
    a, b = PRODUCT
    quad = [("sq", j) for j in SQUARED] + [("prod", (a, b))]
    m = len(quad)
    C = np.zeros((m, m))
    for r, (kr, ir) in enumerate(quad):
        for c, (kc, ic) in enumerate(quad):
            if kr == "sq" and kc == "sq":
                C[r, c] = 2 * omega[ir, ic] ** 2
            elif kr == "prod" and kc == "prod":
                C[r, c] = omega[a, a] * omega[b, b] + omega[a, b] ** 2
            else:
                j = ir if kr == "sq" else ic
                C[r, c] = 2 * omega[a, j] * omega[b, j]
    cov = np.zeros((k + m, k + m))
    cov[:k, :k] = omega
    cov[k:, k:] = C
    return cov


def gaussian_coefficients(rho, k=20, xi=None):
    """Intercept and feature coefficients scaled so the linear predictor has unit variance."""
    xi = gaussian_xi() if xi is None else np.asarray(xi, dtype=np.float64)
    if k < max(PRODUCT) + 1:
        raise ValueError(f"the quadratic design needs at least {max(PRODUCT) + 1} predictors, got {k}")
    if xi.shape != (k + len(SQUARED) + 2,):
        raise ValueError(f"xi must hold {k + len(SQUARED) + 2} values (intercept, {k} linear and "
                         f"{len(SQUARED) + 1} quadratic terms), got {xi.shape[0]}")
    cov = feature_covariance(block_correlation(k, rho))
    raw = xi[1:]
    scale = 1.0 / np.sqrt(raw @ cov @ raw)
    return xi[0], scale * raw


@dataclass(frozen=True)
class GaussianReplicate:
    X: np.ndarray
    y: np.ndarray
    intercept: float
    theta: np.ndarray
    draws: ParameterDraws
    center: np.ndarray
    neighborhood: Neighborhood
    mu: np.ndarray
    truth: np.ndarray


def gaussian_replicate(rho=0.5, seed=0, n=1024, k=20, n_draws=100, neighborhood_size=None,
                       centered_covariance=True, xi=None):
    s_x, s_y, s_post, s_x0, s_nb = _streams(seed, 5)
    b0, theta = gaussian_coefficients(rho, k, xi)
    X = simulate_predictors(n, k, rho, seed=s_x)
    F = quadratic_features(X)
    y = b0 + F @ theta + s_y.standard_normal(n)
    design = np.column_stack([np.ones(n), F])
    post, _ = conjugate_gaussian_posterior(design, y, 1.0, 1.0, 1.0, n_draws, seed=s_post)
    draws = ParameterDraws(post[1:], post[0])
    center = simulate_predictors(1, k, rho, seed=s_x0)[0]
    size = 3 * k if neighborhood_size is None else neighborhood_size
    nb = gaussian_neighborhood(center, empirical_covariance(X, centered_covariance), n, size,
                               seed=s_nb)
    mu = predict_linear(quadratic_features(nb.points), draws)
    truth = b0 + quadratic_features(nb.points) @ theta
    return GaussianReplicate(X, y, b0, theta, draws, center, nb, mu, truth)


def run_gaussian(rho=0.5, seed=0, n=1024, k=20, n_draws=100, p=2.0, penalty=None,
                 slim_p=True, budgets=None):
    """One replicate: the agnostic path on the neighborhood, plus masks at the test point."""
    rep = gaussian_replicate(rho, seed, n, k, n_draws)
    pen = penalty or PenaltyConfig("group-mcp", mcp_gamma=1.1, p=p)
    path = fit_slim_a(rep.mu, rep.neighborhood, pen)
    rows = []
    for j, e in enumerate(path.by_size(k)):
        if e is None:
            continue
        nu = e.coef.predict(rep.neighborhood.points)
        rows.append({"method": f"slim-a-p{p:g}", "size": j, "w2": e.w2_distance,
                     "w2_r2": e.w2_r2, "rel_mse": relative_mse(nu, rep.mu, rep.truth[:, None])})
    if slim_p:
        point = point_neighborhood(quadratic_features(rep.center[None, :])[0])
        mu0 = predict_linear(point.points, rep.draws)
        null = np.broadcast_to(rep.draws.intercept, mu0.shape)
        truth0 = rep.intercept + point.points @ rep.theta
        kp = rep.draws.n_features
        res = quadratic_slim_p(point, rep.draws, mu0, "exact",
                               budgets=budgets or range(1, min(kp, 6) + 1))
        for e in res:
            nu = e.coef.predict(point.points)
            rows.append({"method": "binary-program", "size": e.mask.size, "w2": e.w2_distance,
                         "w2_r2": wasserstein_r2(mu0, nu, null),
                         "rel_mse": relative_mse(nu, mu0, truth0[:, None]),
                         "coef_rel_mse": relative_mse(e.coef.beta, rep.draws.theta,
                                                      rep.theta[:, None])})
    return {"scenario": "gaussian", "rho": rho, "seed": seed, "rows": rows}


def average_rows(results):
    """Mean of every numeric field per ``(method, size)`` across replicate results."""
    groups = {}
    for res in results:
        for row in res["rows"]:
            groups.setdefault((row["method"], row["size"]), []).append(row)
    out = []
    for (method, size), rows in sorted(groups.items()):
        avg = {"method": method, "size": size, "replicates": len(rows)}
        for key in rows[0]:
            if key in ("method", "size", "active"):
                continue
            avg[key] = float(np.mean([r[key] for r in rows]))
        out.append(avg)
    return out


def linear_predictor_variance(rho=0.0, k=20, n=100000, seed=1, xi=None):
    """Empirical variance of the Gaussian scenario's linear predictor (should be close to 1)."""
    b0, theta = gaussian_coefficients(rho, k, xi)
    X = simulate_predictors(n, k, rho, seed=seed)
    return float(np.var(b0 + quadratic_features(X) @ theta))

