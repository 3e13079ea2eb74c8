"""Parameter draws, prediction ensembles, neighborhoods, kernels and simulated data."""

import warnings
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator

from ._validation import ShapeMismatchError, as_matrix, check_points, check_weights


def make_rng(seed):
    """Seeded counter-based generator (Philox) used for every random draw."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.Philox(seed))


@dataclass(frozen=True)
class ParameterDraws:
    """``T`` draws of a linear model's coefficients.

    ``theta`` is ``(k, T)``. The intercept, when the model has one, is kept
    apart in ``intercept`` (length ``T``) so that masks and searches only
    ever address the ``k`` covariates.
    """

    theta: np.ndarray
    intercept: np.ndarray = None

    def __post_init__(self):
        theta = as_matrix(self.theta, name="theta")
        object.__setattr__(self, "theta", theta)
        if self.intercept is not None:
            b = np.asarray(self.intercept, dtype=np.float64).ravel()
            if b.shape[0] != theta.shape[1]:
                raise ShapeMismatchError("intercept draws vs theta columns", b.shape, (theta.shape[1],))
            if not np.all(np.isfinite(b)):
                raise ValueError("intercept draws must be finite")
            object.__setattr__(self, "intercept", b)

    @property
    def n_features(self):
        return self.theta.shape[0]

    @property
    def n_draws(self):
        return self.theta.shape[1]

    def masked(self, active):
        """Draws with every covariate outside ``active`` set to zero."""
        keep = np.zeros(self.n_features, dtype=bool)
        keep[list(active)] = True
        return ParameterDraws(np.where(keep[:, None], self.theta, 0.0), self.intercept)


def as_draws(draws):
    if isinstance(draws, ParameterDraws):
        return draws
    return ParameterDraws(draws)


def predict_linear(points, draws):
    """Ensemble ``(N, T)`` of linear predictions ``z_i' theta^(t)`` (+ intercept)."""
    draws = as_draws(draws)
    points = check_points(points, draws.n_features)
    values = points @ draws.theta
    if draws.intercept is not None:
        values = values + draws.intercept[None, :]
    return values


@dataclass(frozen=True)
class Neighborhood:
    points: np.ndarray
    center: np.ndarray
    weights: np.ndarray
    construction: str = "user-grid"
    psd_clipped: bool = False

    def __post_init__(self):
        points = as_matrix(self.points, name="points")
        center = np.asarray(self.center, dtype=np.float64).ravel()
        if center.shape[0] != points.shape[1]:
            raise ShapeMismatchError("center vs neighborhood columns", center.shape, (points.shape[1],))
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "weights", check_weights(self.weights, points.shape[0]))

    @property
    def size(self):
        return self.points.shape[0]


def point_neighborhood(center):
    """The single-point neighborhood ``{x0}``."""
    center = np.asarray(center, dtype=np.float64).ravel()
    return Neighborhood(center[None, :], center, np.ones(1), construction="user-grid")


def default_neighborhood_size(k):
    return max(3 * k, 50)


def empirical_covariance(X, centered=True):
    """``(1/n) sum (x_i - xbar)(x_i - xbar)'``; ``centered=False`` gives ``sum x_i x_i'``."""
    X = as_matrix(X, name="X")
    if centered:
        Xc = X - X.mean(axis=0)
        return Xc.T @ Xc / X.shape[0]
    return X.T @ X


def _sqrt_psd(cov):
    """A factor ``L`` with ``L L' = cov``; clips negative eigenvalues when Cholesky fails."""
    try:
        return np.linalg.cholesky(cov), False
    except np.linalg.LinAlgError:
        vals, vecs = np.linalg.eigh((cov + cov.T) / 2)
        clipped = bool(np.any(vals < 0))
        return vecs * np.sqrt(np.clip(vals, 0.0, None)), clipped


def gaussian_neighborhood(center, covariance, n, size=None, seed=0):
    """Sample ``size`` points from ``N(center, covariance / n)`` with equal weights."""
    center = np.asarray(center, dtype=np.float64).ravel()
    k = center.shape[0]
    cov = as_matrix(covariance, name="covariance") / float(n)
    if cov.shape != (k, k):
        raise ShapeMismatchError("covariance vs center", cov.shape, (k, k))
    size = default_neighborhood_size(k) if size is None else int(size)
    if size < 1:
        raise ValueError("neighborhood size must be at least 1")
    L, clipped = _sqrt_psd(cov)
    if clipped:
        warnings.warn("covariance is not positive semidefinite; negative eigenvalues clipped to 0",
                      RuntimeWarning, stacklevel=2)
    rng = make_rng(seed)
    points = center + rng.standard_normal((size, k)) @ L.T
    return Neighborhood(points, center, np.ones(size), construction="gaussian", psd_clipped=clipped)


def knn_neighborhood(center, X, size):
    """The ``size`` rows of ``X`` closest to ``center`` in Euclidean distance, equal weights."""
    X = as_matrix(X, name="X")
    center = np.asarray(center, dtype=np.float64).ravel()
    d = np.linalg.norm(X - center, axis=1)
    idx = np.argsort(d, kind="stable")[:int(size)]
    return Neighborhood(X[idx], center, np.ones(len(idx)), construction="knn")


@dataclass(frozen=True)
class KernelSpec:
    kind: str = "gaussian-mahalanobis"
    scale_matrix: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.kind not in ("gaussian-mahalanobis", "uniform"):
            raise ValueError(f"unknown kernel kind {self.kind!r}")
        if self.kind == "gaussian-mahalanobis":
            S = as_matrix(self.scale_matrix, name="scale_matrix")
            if S.shape[0] != S.shape[1] or not np.allclose(S, S.T, atol=1e-10, rtol=0):
                raise ValueError("kernel scale matrix must be square and symmetric")
            object.__setattr__(self, "scale_matrix", S)


def kernel_weights(spec, center, points):
    """``exp(-(x0 - z)' S (x0 - z))`` per point, or all ones for the uniform kernel."""
    points = as_matrix(points, name="points")
    if spec.kind == "uniform":
        return np.ones(points.shape[0])
    d = points - np.asarray(center, dtype=np.float64).ravel()
    if spec.scale_matrix.shape[0] != d.shape[1]:
        raise ShapeMismatchError("kernel scale matrix vs points", spec.scale_matrix.shape,
                                 (d.shape[1], d.shape[1]))
    return np.exp(-np.einsum("ij,jk,ik->i", d, spec.scale_matrix, d))


def block_correlation(k, rho, block=5):
    """Block-diagonal equicorrelation matrix with blocks of ``block`` variables."""
    if not 0 <= rho < 1:
        raise ValueError("rho must lie in [0, 1)")
    omega = np.eye(k)
    for start in range(0, k, block):
        stop = min(start + block, k)
        omega[start:stop, start:stop] = rho
        np.fill_diagonal(omega[start:stop, start:stop], 1.0)
    return omega


def simulate_predictors(n, k, rho, seed=0):
    """``n`` i.i.d. rows from ``N(0, block_correlation(k, rho))``."""
    omega = block_correlation(k, rho)
    L = np.linalg.cholesky(omega)
    return make_rng(seed).standard_normal((n, k)) @ L.T


def conjugate_gaussian_posterior(X, y, prior_scale=1.0, ig_shape=1.0, ig_rate=1.0,
                                 n_draws=100, seed=0):
    """Draws from the normal-inverse-gamma posterior of a Gaussian linear model.

    Prior: ``sigma2 ~ InvGamma(ig_shape, ig_rate)`` and
    ``theta | sigma2 ~ N(0, sigma2 * prior_scale * I)``.

    Returns
    -------
    theta : ndarray of shape (k, n_draws)
    sigma2 : ndarray of shape (n_draws,)
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError("X must be two-dimensional")
    y = np.asarray(y, dtype=np.float64).ravel()
    if y.shape[0] != X.shape[0]:
        raise ShapeMismatchError("X rows vs y", X.shape, y.shape)
    n, k = X.shape
    precision = X.T @ X + np.eye(k) / prior_scale
    V = np.linalg.inv(precision)
    V = (V + V.T) / 2
    m = V @ (X.T @ y)
    shape = ig_shape + n / 2.0
    rate = ig_rate + 0.5 * (y @ y - m @ precision @ m)
    rng = make_rng(seed)
    sigma2 = rate / rng.gamma(shape, 1.0, size=n_draws)
    L = np.linalg.cholesky(V)
    z = rng.standard_normal((k, n_draws))
    theta = m[:, None] + (L @ z) * np.sqrt(sigma2)[None, :]
    return theta, sigma2


class GaussianNeighborhood(BaseEstimator):
    """Learns ``Sigma_hat`` from training data and samples ``N(x0, Sigma_hat / n)`` neighborhoods.

    Parameters
    ----------
    size : int or None
        Points per neighborhood; ``None`` means ``max(3k, 50)``.
    centered : bool
        Use the centered, ``1/n``-normalised covariance. ``False`` uses the
        raw cross-product ``sum x_i x_i'``.
    random_state : int
    """

    def __init__(self, size=None, centered=True, random_state=0):
        self.size = size
        self.centered = centered
        self.random_state = random_state

    def fit(self, X, y=None):
        X = as_matrix(X, name="X")
        self.covariance_ = empirical_covariance(X, centered=self.centered)
        self.n_samples_ = X.shape[0]
        self.n_features_in_ = X.shape[1]
        return self

    def sample(self, center):
        return gaussian_neighborhood(center, self.covariance_, self.n_samples_,
                                     self.size, self.random_state)
