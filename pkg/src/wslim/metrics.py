"""Diagnostics for surrogate ensembles: distances, Wasserstein R^2, relative MSE."""

import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from ._validation import check_ensemble, check_order, check_same_shape, check_weights
from .ensemble import as_draws, predict_linear
from .ot import ensemble_distance, rank1d_plan

NULL_KINDS = ("intercept", "zero", "mean")


def null_ensemble(mu, kind="intercept", weights=None, intercept=None):
    """Null-model predictions with the shape of ``mu`` (N, T).

    ``intercept``: the intercept draws when given (a model-preserving fit
    keeps them), otherwise the per-draw weighted mean over observations, i.e.
    the least squares intercept-only fit. ``zero``: all zeros. ``mean``: each
    observation's predictions averaged over draws.
    """
    mu = check_ensemble(mu)
    if kind == "zero":
        return np.zeros_like(mu)
    if kind == "mean":
        return np.repeat(mu.mean(axis=1, keepdims=True), mu.shape[1], axis=1)
    if kind == "intercept":
        if intercept is not None:
            b = np.asarray(intercept, dtype=np.float64).ravel()
            return np.broadcast_to(b, mu.shape).copy()
        w = check_weights(weights, mu.shape[0])
        return np.broadcast_to(w @ mu / w.sum(), mu.shape).copy()
    raise ValueError(f"unknown null model {kind!r}; choose from {NULL_KINDS}")


def r2_from_distances(num, den):
    """``1 - num / den`` for p-th power distances, with 0/0 -> ratio 0 and d/0 -> ratio inf."""
    if den == 0:
        ratio = 0.0 if num == 0 else math.inf
    else:
        ratio = num / den
    return 1.0 - ratio


def wasserstein_r2(m_pred, q_pred, null_pred, p=2.0, solver="auto"):
    """Wasserstein R^2 of ``q_pred`` relative to ``null_pred``, both against ``m_pred``.

    A degenerate null (distance 0) gives 1 if ``q_pred`` also matches and
    ``-inf`` otherwise.
    """
    m = check_ensemble(m_pred, "m_pred")
    q = check_ensemble(q_pred, "q_pred")
    z = check_ensemble(null_pred, "null_pred")
    check_same_shape(m, q, "m_pred vs q_pred")
    check_same_shape(m, z, "m_pred vs null_pred")
    num = ensemble_distance(m, q, p, solver) ** p
    den = ensemble_distance(m, z, p, solver) ** p
    return r2_from_distances(num, den)


def per_observation_distances(m_pred, q_pred, p=2.0):
    """``W_p`` between each observation's T predictions (one-dimensional clouds)."""
    m = check_ensemble(m_pred, "m_pred")
    q = check_ensemble(q_pred, "q_pred")
    check_same_shape(m, q, "m_pred vs q_pred")
    p = check_order(p)
    return np.array([max(rank1d_plan(m[i][:, None], q[i][:, None], p).objective, 0.0) ** (1 / p)
                     for i in range(m.shape[0])])


def average_wasserstein(m_pred, q_pred, p=2.0):
    return float(np.mean(per_observation_distances(m_pred, q_pred, p)))


def quantile_exemplars(distances, quantiles=(0.0, 0.5, 1.0)):
    """Indices of the observations at the given quantiles of the distances (best, median, worst)."""
    d = np.asarray(distances, dtype=np.float64)
    order = np.argsort(d, kind="stable")
    pos = [int(round(q * (len(d) - 1))) for q in quantiles]
    return [int(order[i]) for i in pos]


def relative_mse(estimate, reference, truth):
    """``E||estimate - truth||^2 / E||reference - truth||^2`` with draws on the last axis.

    ``truth`` broadcasts against the draws (e.g. shape (N, 1) or (k, 1)).
    Returns ``inf`` (or ``nan`` for 0/0) with a warning when the reference
    error is zero.
    """
    est = np.asarray(estimate, dtype=np.float64)
    ref = np.asarray(reference, dtype=np.float64)
    tru = np.asarray(truth, dtype=np.float64)
    if est.ndim == 1:
        est = est[None, :]
    if ref.ndim == 1:
        ref = ref[None, :]
    if tru.ndim == 1:
        tru = tru[:, None]
    num = float(np.mean(np.sum((est - tru) ** 2, axis=0)))
    den = float(np.mean(np.sum((ref - tru) ** 2, axis=0)))
    if den == 0:
        warnings.warn("relative MSE has a zero denominator", RuntimeWarning, stacklevel=2)
        return math.nan if num == 0 else math.inf
    return num / den


def loo_importance(points, draws, mu=None, p=2.0, solver="auto"):
    """Rank covariates by the distance lost when each one is masked out alone.

    Returns ``(order, scores)``: covariate indices sorted by decreasing
    distance (ties by index) and the distance per covariate.
    """
    draws = as_draws(draws)
    full = predict_linear(points, draws) if mu is None else check_ensemble(mu)
    k = draws.n_features
    scores = np.empty(k)
    for j in range(k):
        keep = [i for i in range(k) if i != j]
        scores[j] = ensemble_distance(full, predict_linear(points, draws.masked(keep)), p, solver)
    order = sorted(range(k), key=lambda j: (-scores[j], j))
    return order, scores


@dataclass
class DiagnosticsReport:
    per_observation: list
    average: float
    distance: float
    w2_r2: float
    exemplars: dict
    flags: list = field(default_factory=list)

    def to_dict(self):
        d = asdict(self)
        d["w2_r2"] = _json_float(self.w2_r2)
        return d


def _json_float(v):
    if math.isinf(v):
        return "-inf" if v < 0 else "inf"
    if math.isnan(v):
        return "nan"
    return v


def diagnostics(m_pred, q_pred, null_pred, p=2.0, solver="auto"):
    m = check_ensemble(m_pred, "m_pred")
    q = check_ensemble(q_pred, "q_pred")
    z = check_ensemble(null_pred, "null_pred")
    per = per_observation_distances(m, q, p)
    num = ensemble_distance(m, q, p, solver)
    den = ensemble_distance(m, z, p, solver)
    r2 = r2_from_distances(num ** p, den ** p)
    flags = []
    if den == 0:
        flags.append("degenerate-null" if num == 0 else "infinite-ratio")
    elif r2 < 0:
        flags.append("worse-than-null")
    best, median, worst = quantile_exemplars(per)
    return DiagnosticsReport(per.tolist(), float(np.mean(per)), num, r2,
                             {"best": best, "median": median, "worst": worst}, flags)
