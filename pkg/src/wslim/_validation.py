"""Input validation helpers shared by the estimators and the functional API."""

import numpy as np
from sklearn.utils import check_array


class ShapeMismatchError(ValueError):
    """Raised when two arrays that must agree in shape do not."""

    def __init__(self, what, left, right):
        self.left = tuple(left)
        self.right = tuple(right)
        super().__init__(f"{what}: shape {self.left} does not match shape {self.right}")


class UnsupportedDimensionError(ValueError):
    pass


def as_matrix(x, name="array", allow_1d=True, min_features=1):
    """Return a finite float64 2-D array; 1-D input becomes a single column."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1 and allow_1d:
        x = x.reshape(-1, 1)
    return check_array(x, dtype=np.float64, ensure_all_finite=True, input_name=name,
                       ensure_min_samples=1, ensure_min_features=min_features)


def check_ensemble(mu, name="ensemble"):
    """Prediction ensembles are (n_obs, n_draws)."""
    return as_matrix(mu, name=name)


def check_points(points, n_features=None, name="points"):
    points = as_matrix(points, name=name)
    if n_features is not None and points.shape[1] != n_features:
        raise ShapeMismatchError(f"{name} columns vs coefficient rows",
                                 points.shape, (points.shape[0], n_features))
    return points


def check_weights(weights, n, name="weights"):
    if weights is None:
        return np.ones(n)
    w = np.asarray(weights, dtype=np.float64).ravel()
    if w.shape[0] != n:
        raise ShapeMismatchError(name, w.shape, (n,))
    if not np.all(np.isfinite(w)) or np.any(w < 0):
        raise ValueError(f"{name} must be finite and nonnegative")
    if not np.any(w > 0):
        raise ValueError(f"{name} must contain at least one positive entry")
    return w


def check_same_shape(a, b, what):
    if a.shape != b.shape:
        raise ShapeMismatchError(what, a.shape, b.shape)


def check_order(p, allow_inf=False):
    p = float(p)
    if np.isnan(p) or p <= 0:
        raise ValueError(f"order p must be positive, got {p}")
    if np.isinf(p) and not allow_inf:
        raise ValueError("order p must be finite here")
    return p
