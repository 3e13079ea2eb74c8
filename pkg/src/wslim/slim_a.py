"""Model-agnostic sparse surrogates: group-penalised L_p regression of an ensemble.

For every draw ``t`` the surrogate is ``nu_z^(t) = b^(t) + z' beta^(t)`` and
the coefficients of covariate ``j`` across all draws form one group. The
fitted objective is

    sum_z w_z sum_t |mu_z^(t) - b^(t) - z' beta^(t)|^p + sum_j P(||beta_j||_2)

with ``P`` the group lasso or group MCP penalty. ``p = 2`` is solved by block
coordinate descent; ``p = 1``, general ``p`` and ``p = inf`` reduce to
sequences of weighted or smoothed problems solved by the same machinery.
"""

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import ShapeMismatchError, as_matrix, check_ensemble, check_weights
from .ensemble import Neighborhood
from .metrics import r2_from_distances
from .ot import ensemble_distance

ACTIVE_TOL = 1e-10
PENALTIES = ("group-lasso", "group-mcp")


class IdentificationWarning(UserWarning):
    """Neighborhood too small to identify the surrogate coefficients."""


@dataclass(frozen=True)
class PenaltyConfig:
    """Penalty family, regularisation path and loss order.

    ``lambdas=None`` builds ``n_lambdas`` log-spaced values from the
    smallest all-zero level down to ``lambda_min_ratio`` times it.
    ``l1_ratio < 1`` adds a ridge term ``lam * (1 - l1_ratio) / 2 * ||b||^2``
    to every group.
    """

    family: str = "group-lasso"
    lambdas: tuple = None
    n_lambdas: int = 100
    lambda_min_ratio: float = 1e-4
    mcp_gamma: float = 1.1
    l1_ratio: float = 1.0
    p: float = 2.0

    def __post_init__(self):
        if self.family not in PENALTIES:
            raise ValueError(f"unknown penalty {self.family!r}; choose from {PENALTIES}")
        if not self.mcp_gamma > 1:
            raise ValueError("mcp_gamma must exceed 1")
        if not 0 < self.l1_ratio <= 1:
            raise ValueError("l1_ratio must lie in (0, 1]")
        if not self.p > 0:
            raise ValueError(f"loss order p must be positive, got {self.p}")
        if self.lambdas is not None:
            lams = tuple(float(v) for v in np.atleast_1d(self.lambdas))
            if len(lams) == 0:
                raise ValueError("lambda grid is empty")
            if any(v < 0 or not math.isfinite(v) for v in lams):
                raise ValueError("lambdas must be finite and nonnegative")
            if any(b >= a for a, b in zip(lams, lams[1:])):
                raise ValueError("lambda grid must be strictly decreasing")
            object.__setattr__(self, "lambdas", lams)


@dataclass
class CoefficientMatrix:
    """Surrogate coefficients ``beta`` (k, T) and optional unpenalised intercept (T,)."""

    beta: np.ndarray
    intercept: np.ndarray = None
    objective: float = float("nan")
    n_iter: int = 0
    converged: bool = True
    history: list = field(default_factory=list)

    def __post_init__(self):
        self.beta = np.asarray(self.beta, dtype=np.float64)
        norms = np.linalg.norm(self.beta, axis=1)
        self.beta[norms <= ACTIVE_TOL] = 0.0

    @property
    def active_groups(self):
        return tuple(int(j) for j in np.flatnonzero(np.linalg.norm(self.beta, axis=1) > ACTIVE_TOL))

    def predict(self, points):
        out = as_matrix(points, name="points") @ self.beta
        if self.intercept is not None:
            out = out + self.intercept[None, :]
        return out


def group_penalty(norms, lam, family="group-lasso", mcp_gamma=1.1, l1_ratio=1.0):
    """Total penalty for an array of group norms."""
    norms = np.asarray(norms, dtype=np.float64)
    la = lam * l1_ratio
    ridge = 0.5 * lam * (1.0 - l1_ratio) * norms ** 2
    if family == "group-lasso":
        pen = la * norms
    else:
        pen = np.where(norms <= mcp_gamma * la, la * norms - norms ** 2 / (2 * mcp_gamma),
                       0.5 * mcp_gamma * la ** 2)
    return float(np.sum(pen + ridge))


def _lasso_row(u, c, kappa):
    """argmin_b sum_t (c_t b_t^2 - 2 u_t b_t) + 2 kappa ||b||, c_t > 0."""
    nu = math.sqrt(float(u @ u))
    if nu <= kappa:
        return np.zeros_like(u)
    if np.ndim(c) == 0 or np.ptp(c) <= 1e-14 * np.max(c):
        c0 = float(np.max(c))
        return (1.0 - kappa / nu) * u / c0
    # ||u / (c s + kappa)|| = 1 defines the norm s of the minimiser; the left
    # side is convex and decreasing in s, so Newton from s = 0 is monotone.
    u2 = u * u
    s = 0.0
    for _ in range(200):
        d = c * s + kappa
        g = float(np.sum(u2 / d ** 2)) - 1.0
        dg = -2.0 * float(np.sum(c * u2 / d ** 3))
        step = g / dg
        s_new = s - step
        if s_new <= s * (1 + 1e-15):
            break
        s = s_new
    return u * s / (c * s + kappa)


def _row_objective(b, u, c, lam_l1, family, gamma):
    s = math.sqrt(float(b @ b))
    quad = float(np.sum(c * b * b) - 2.0 * (u @ b))
    if family == "group-lasso":
        return quad + lam_l1 * s
    if s <= gamma * lam_l1:
        return quad + lam_l1 * s - s * s / (2 * gamma)
    return quad + 0.5 * gamma * lam_l1 ** 2


def group_update(u, c, lam_l1, family="group-lasso", gamma=1.1):
    """Minimise ``sum_t (c_t b_t^2 - 2 u_t b_t) + P(||b||)`` over one group.

    ``c`` may be a scalar or a per-draw vector; any ridge part of the penalty
    must already be folded into ``c``.
    """
    u = np.asarray(u, dtype=np.float64)
    c = np.broadcast_to(np.asarray(c, dtype=np.float64), u.shape)
    if np.any(c <= 0):
        return np.zeros_like(u)
    if family == "group-lasso" or lam_l1 == 0:
        return _lasso_row(u, c, lam_l1 / 2.0)
    thresh = gamma * lam_l1
    candidates = [np.zeros_like(u)]
    c1 = c - 1.0 / (2 * gamma)
    if np.all(c1 > 0):
        b1 = _lasso_row(u, c1, lam_l1 / 2.0)
        if np.linalg.norm(b1) <= thresh:
            candidates.append(b1)
    b2 = u / c
    if np.linalg.norm(b2) > thresh:
        candidates.append(b2)
    nu = np.linalg.norm(u)
    if nu > 0:
        candidates.append(thresh * u / nu)
    scores = [_row_objective(b, u, c, lam_l1, family, gamma) for b in candidates]
    return candidates[int(np.argmin(scores))]


def _as_entry_weights(weights, shape):
    """Observation weights (N,) stay 1-D; entry weights must be (N, T)."""
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim == 2 and w.shape != shape:
        raise ShapeMismatchError("entry weights vs targets", w.shape, shape)
    return w


def _quadratic_loss(R, W):
    if W.ndim == 1:
        return float(W @ np.einsum("it,it->i", R, R))
    return float(np.sum(W * R * R))


def _bcd(X, Y, W, lam, family, gamma, l1_ratio, B, b, fit_intercept,
         tol=1e-8, max_sweeps=10000, record=False):
    """Block coordinate descent for ``sum W r^2 + sum_j P(||B_j||)``.

    ``W`` holds observation weights (N,) or entry weights (N, T). ``B`` and
    ``b`` are updated in place. Returns ``(n_sweeps, converged, history)``.
    """
    N, k = X.shape
    lam_l1 = lam * l1_ratio
    ridge = 0.5 * lam * (1.0 - l1_ratio)
    R = Y - X @ B
    if fit_intercept:
        R -= b[None, :]
    scalar = W.ndim == 1
    if scalar:
        WX = X * W[:, None]
        cx = np.einsum("ij,ij->j", X, WX)
        wsum = float(W.sum())
    else:
        X2 = X * X
        wsum_t = W.sum(axis=0)

    def objective():
        return _quadratic_loss(R, W) + group_penalty(
            np.linalg.norm(B, axis=1), lam, family, gamma, l1_ratio)

    history = [objective()] if record else []
    converged = False
    sweeps = 0
    for sweeps in range(1, max_sweeps + 1):
        max_delta = 0.0
        for j in range(k):
            old = B[j]
            if scalar:
                if cx[j] <= 0:
                    continue
                u = WX[:, j] @ R + cx[j] * old
                c = cx[j] + ridge
            else:
                cv = X2[:, j] @ W
                u = X[:, j] @ (W * R) + cv * old
                c = cv + ridge
            new = group_update(u, c, lam_l1, family, gamma)
            delta = new - old
            if np.any(delta):
                R -= np.outer(X[:, j], delta)
                B[j] = new
                max_delta = max(max_delta, float(np.max(np.abs(delta))))
        if fit_intercept:
            if scalar:
                db = (W @ R) / wsum
            else:
                db = np.sum(W * R, axis=0) / np.where(wsum_t > 0, wsum_t, 1.0)
            R -= db[None, :]
            b += db
            max_delta = max(max_delta, float(np.max(np.abs(db))))
        if record:
            history.append(objective())
        scale = max(float(np.max(np.abs(B))) if B.size else 0.0,
                    float(np.max(np.abs(b))) if fit_intercept else 0.0)
        if max_delta <= tol * scale or max_delta == 0.0:
            converged = True
            break
    return sweeps, converged, history


def _init(X, Y, init, fit_intercept):
    k, T = X.shape[1], Y.shape[1]
    if init is None:
        return np.zeros((k, T)), np.zeros(T)
    B = np.array(init.beta, dtype=np.float64, copy=True)
    b = np.zeros(T) if init.intercept is None or not fit_intercept else np.array(init.intercept, dtype=np.float64)
    return B, b


def _prepare(X, Y, sample_weight):
    X = as_matrix(X, name="X", min_features=0)
    Y = check_ensemble(Y, name="targets")
    if X.shape[0] != Y.shape[0]:
        raise ShapeMismatchError("design rows vs target rows", X.shape, Y.shape)
    w = check_weights(sample_weight, X.shape[0], name="sample_weight")
    return X, Y, w


def lp_loss(R, weights, p):
    """``sum_z w_z sum_t |r|^p``; for ``p = inf`` the per-draw max over supported observations."""
    R = np.asarray(R, dtype=np.float64)
    if math.isinf(p):
        return float(np.sum(np.max(np.abs(R[weights > 0]), axis=0)))
    return float(weights @ np.sum(np.abs(R) ** p, axis=1))


def _penalised_objective(X, Y, w, B, b, lam, pen, p, fit_intercept):
    R = Y - X @ B - (b[None, :] if fit_intercept else 0.0)
    return lp_loss(R, w, p) + group_penalty(np.linalg.norm(B, axis=1), lam, pen.family,
                                            pen.mcp_gamma, pen.l1_ratio)


def _centred_bcd(X, Y, w, lam, family, gamma, l1_ratio, B, b, fit_intercept, tol, max_sweeps,
                 record=False):
    """:func:`_bcd` on the weighted-centred design, updating ``B`` and ``b`` in place.

    With observation weights the intercept then decouples from the groups;
    the penalty ignores the intercept, so this is an exact change of variables.
    Entry-wise weights (IRLS) have no common centre and go through unchanged.
    """
    if not fit_intercept or np.ndim(w) != 1:
        return _bcd(X, Y, w, lam, family, gamma, l1_ratio, B, b, fit_intercept, tol, max_sweeps,
                    record)
    shift = (w / w.sum()) @ X
    b += shift @ B
    out = _bcd(X - shift, Y, w, lam, family, gamma, l1_ratio, B, b, fit_intercept, tol,
               max_sweeps, record)
    b -= shift @ B
    return out


def solve_p2(X, Y, lam, pen=PenaltyConfig(), sample_weight=None, fit_intercept=False,
             init=None, tol=1e-8, max_sweeps=10000, record=False):
    """Weighted multi-response least squares with a group penalty across draws."""
    X, Y, w = _prepare(X, Y, sample_weight)
    B, b = _init(X, Y, init, fit_intercept)
    n, conv, hist = _centred_bcd(X, Y, w, lam, pen.family, pen.mcp_gamma, pen.l1_ratio, B, b,
                                 fit_intercept, tol, max_sweeps, record)
    obj = _penalised_objective(X, Y, w, B, b, lam, pen, 2.0, fit_intercept)
    return CoefficientMatrix(B, b if fit_intercept else None, obj, n, conv, hist)


def _entry_weights_irls(R, w, p):
    a = np.abs(R)
    if p < 2:
        return w[:, None] * (p / 2.0) * np.maximum(a, 1e-8) ** (p - 2)
    return w[:, None] * (p / 2.0) * np.maximum(a ** (p - 2), 1e-8)


def solve_general_p(X, Y, lam, pen=PenaltyConfig(), sample_weight=None, fit_intercept=False,
                    init=None, tol=1e-8, max_iter=100):
    """Penalised L_p regression (p > 1) by iteratively re-weighted least squares.

    Each step minimises the quadratic with weights ``(p/2) |r|^(p-2)`` at the
    current residuals (a majoriser for p < 2). For p > 2 the weights carry the
    extra factor ``p - 1`` of the loss curvature and the working response is
    moved by ``r / (p - 1)``, which makes the step a Newton step. A step that
    raises the objective is halved back toward the previous iterate.
    """
    p = float(pen.p)
    if p <= 1:
        raise ValueError("solve_general_p needs p > 1; use solve_p1 for p = 1")
    X, Y, w = _prepare(X, Y, sample_weight)
    B, b = _init(X, Y, init, fit_intercept)

    def obj(B, b):
        return _penalised_objective(X, Y, w, B, b, lam, pen, p, fit_intercept)

    current = obj(B, b)
    history = [current]
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        R = Y - X @ B - (b[None, :] if fit_intercept else 0.0)
        W = w if p == 2 else _entry_weights_irls(R, w, p)
        target = Y
        if p > 2:
            # Newton form: curvature weights (p-1) times larger, working response shrunk to match
            W = W * (p - 1)
            target = Y - R + R / (p - 1)
        Bn, bn = B.copy(), b.copy()
        _centred_bcd(X, target, W, lam, pen.family, pen.mcp_gamma, pen.l1_ratio, Bn, bn,
                     fit_intercept, tol=1e-8 if p == 2 else min(tol, 1e-10), max_sweeps=10000)
        new = obj(Bn, bn)
        step = 1.0
        while new > current and step > 1e-6:
            step /= 2
            Bs, bs = B + step * (Bn - B), b + step * (bn - b)
            new = obj(Bs, bs)
            if new <= current:
                Bn, bn = Bs, bs
        if new > current:
            converged = True
            break
        change = (current - new) / max(abs(current), 1e-300)
        moved = max(float(np.max(np.abs(Bn - B), initial=0.0)), float(np.max(np.abs(bn - b))))
        size = max(float(np.max(np.abs(Bn), initial=0.0)), float(np.max(np.abs(bn))), 1e-300)
        B, b, current = Bn, bn, new
        history.append(current)
        # a flat objective can stall far from the minimiser, so the step must be small too
        if (change < tol and moved <= 1e-9 * size) or p == 2:
            converged = True
            break
    return CoefficientMatrix(B, b if fit_intercept else None, current, it, converged, history)


def group_prox(V, step, lam, pen):
    """Row-wise proximal map of ``step * P`` (group lasso or group MCP, plus ridge)."""
    la = lam * pen.l1_ratio
    c = 1.0 / (2.0 * step) + 0.5 * lam * (1.0 - pen.l1_ratio)
    U = V / (2.0 * step)
    nu = np.linalg.norm(U, axis=1)
    kappa = la / 2.0
    if pen.family == "group-lasso" or la == 0:
        factor = np.where(nu > kappa, 1.0 - kappa / np.where(nu > 0, nu, 1.0), 0.0) / c
        return U * factor[:, None]
    g = pen.mcp_gamma
    thresh = g * la
    # candidate norms along the direction of each row: 0, interior, far, boundary
    c1 = c - 1.0 / (2 * g)
    s1 = np.maximum(nu - kappa, 0.0) / c1 if c1 > 0 else np.full_like(nu, np.inf)
    s1 = np.where(s1 <= thresh, s1, np.nan)
    s2 = np.where(nu / c > thresh, nu / c, np.nan)
    cands = np.stack([np.zeros_like(nu), s1, s2, np.full_like(nu, thresh)], axis=1)

    def f(s):
        pen_v = np.where(s <= thresh, la * s - s * s / (2 * g), 0.5 * g * la ** 2)
        return c * s * s - 2.0 * nu[:, None] * s + pen_v

    vals = np.where(np.isnan(cands), np.inf, f(np.nan_to_num(cands)))
    s = cands[np.arange(len(nu)), np.argmin(vals, axis=1)]
    return U * (s / np.where(nu > 0, nu, 1.0))[:, None]


def _huber_parts(R, delta, w):
    a = np.abs(R)
    val = np.where(a <= delta, a * a / (2 * delta), a - delta / 2)
    return float(w @ val.sum(axis=1)), w[:, None] * np.clip(R / delta, -1.0, 1.0)


def _lse_parts(R, tau):
    """Smoothed per-column max of |r|: total value and gradient (N, T)."""
    m = np.max(np.abs(R), axis=0)
    ep = np.exp((R - m) / tau)
    em = np.exp((-R - m) / tau)
    Z = np.sum(ep + em, axis=0)
    return float(np.sum(m + tau * np.log(Z))), (ep - em) / Z


def _smoothed_fista(X, Y, lam, pen, B, b, fit_intercept, parts, lip_r, max_inner):
    """Accelerated proximal gradient on ``smooth(residual) + P`` with adaptive restart.

    ``parts(R)`` returns the smooth loss and its gradient in the residuals;
    ``lip_r`` bounds that gradient's Lipschitz constant.
    """
    A = np.hstack([X, np.ones((X.shape[0], 1))]) if fit_intercept else X
    step = 1.0 / (lip_r * (float(np.linalg.norm(A, 2)) ** 2 or 1.0))

    def resid(B_, b_):
        R = Y - X @ B_
        return R - b_[None, :] if fit_intercept else R

    def total(B_, b_):
        return parts(resid(B_, b_))[0] + group_penalty(
            np.linalg.norm(B_, axis=1), lam, pen.family, pen.mcp_gamma, pen.l1_ratio)

    Bk, bk = B.copy(), b.copy()
    By, by = B.copy(), b.copy()
    theta = 1.0
    f_prev = total(Bk, bk)
    it = 0
    restarted = False
    for it in range(1, max_inner + 1):
        G = parts(resid(By, by))[1]
        Bn = group_prox(By + step * (X.T @ G), step, lam, pen)
        bn = by + step * G.sum(axis=0) if fit_intercept else by
        f_new = total(Bn, bn)
        if f_new > f_prev:
            if restarted:
                break
            theta, restarted = 1.0, True
            By, by = Bk.copy(), bk.copy()
            continue
        restarted = False
        theta_n = (1 + math.sqrt(1 + 4 * theta * theta)) / 2
        mom = (theta - 1) / theta_n
        delta = max(float(np.max(np.abs(Bn - Bk))) if Bn.size else 0.0,
                    float(np.max(np.abs(bn - bk))) if fit_intercept else 0.0)
        size = max(float(np.max(np.abs(Bn))) if Bn.size else 0.0,
                   float(np.max(np.abs(bn))) if fit_intercept else 0.0, 1e-300)
        By, by = Bn + mom * (Bn - Bk), bn + mom * (bn - bk)
        small = f_prev - f_new <= 1e-13 * max(abs(f_new), 1e-300)
        Bk, bk, theta, f_prev = Bn, bn, theta_n, f_new
        if delta <= 1e-10 * size or (small and delta <= 1e-8 * size):
            break
    return Bk, bk, it


def solve_p1(X, Y, lam, pen=PenaltyConfig(p=1.0), sample_weight=None, fit_intercept=False,
             init=None, delta_min=1e-6, max_inner=20000):
    """Penalised least absolute deviations through a shrinking Huber smoothing.

    The Huber width starts at the median absolute residual and shrinks by a
    factor 10 per stage down to ``delta_min`` times the target scale; each
    stage is warm-started from the previous one.
    """
    X, Y, w = _prepare(X, Y, sample_weight)
    B, b = _init(X, Y, init, fit_intercept)
    scale = float(np.max(np.abs(Y - Y.mean()))) or 1.0
    R = Y - X @ B - (b[None, :] if fit_intercept else 0.0)
    floor = delta_min * scale
    delta = max(float(np.median(np.abs(R))), floor)
    total, history = 0, []
    while True:
        B, b, n = _smoothed_fista(X, Y, lam, pen, B, b, fit_intercept,
                                  lambda R, d=delta: _huber_parts(R, d, w),
                                  float(np.max(w)) / delta, max_inner)
        total += n
        history.append(_penalised_objective(X, Y, w, B, b, lam, pen, 1.0, fit_intercept))
        if delta <= floor:
            break
        delta = max(delta / 10.0, floor)
    return CoefficientMatrix(B, b if fit_intercept else None, history[-1], total, True, history)


def solve_pinf(X, Y, lam, pen=PenaltyConfig(p=math.inf), sample_weight=None, fit_intercept=False,
               init=None, tol=1e-7, max_rounds=60, max_inner=2000):
    """Penalised minimax regression via log-sum-exp smoothing of the max residual.

    The loss is ``sum_t max_z |r_z^(t)|`` over observations with positive
    weight. The temperature starts at a quarter of the largest residual and
    halves each round until the unsmoothed objective changes by less than
    ``tol`` (relative); the best iterate is returned with
    ``converged=False`` if that never happens.
    """
    X, Y, w = _prepare(X, Y, sample_weight)
    keep = w > 0
    Xs, Ys = X[keep], Y[keep]
    B, b = _init(X, Y, init, fit_intercept)

    def true_obj(B_, b_):
        return _penalised_objective(Xs, Ys, w[keep], B_, b_, lam, pen, math.inf, fit_intercept)

    R = Ys - Xs @ B - (b[None, :] if fit_intercept else 0.0)
    scale = float(np.max(np.abs(R))) or float(np.max(np.abs(Ys))) or 1.0
    tau = scale / 4.0
    current = true_obj(B, b)
    best = (current, B.copy(), b.copy())
    history = [current]
    total = 0
    converged = False
    for _ in range(max_rounds):
        B, b, n = _smoothed_fista(Xs, Ys, lam, pen, B, b, fit_intercept,
                                  lambda R, t=tau: _lse_parts(R, t), 1.0 / tau, max_inner)
        total += n
        new = true_obj(B, b)
        history.append(new)
        if new < best[0]:
            best = (new, B.copy(), b.copy())
        if abs(current - new) <= tol * max(abs(new), 1e-300):
            converged = True
            break
        current = new
        tau /= 2.0
    obj, B, b = best
    return CoefficientMatrix(B, b if fit_intercept else None, obj, total, converged, history)


def solve_lp(X, Y, lam, pen=PenaltyConfig(), **kwargs):
    """Dispatch on ``pen.p``."""
    p = float(pen.p)
    if p == 2:
        kwargs.pop("max_iter", None)
        return solve_p2(X, Y, lam, pen, **kwargs)
    if p == 1:
        return solve_p1(X, Y, lam, pen, **kwargs)
    if math.isinf(p):
        return solve_pinf(X, Y, lam, pen, **kwargs)
    if p < 1:
        raise ValueError("loss orders below 1 are not supported (non-convex loss)")
    return solve_general_p(X, Y, lam, pen, **kwargs)


def _null_gradient(X, Y, w, p, fit_intercept):
    """Gradient of the loss at the best intercept-only fit, one row per covariate."""
    T = Y.shape[1]
    if fit_intercept:
        null = solve_lp(np.zeros((X.shape[0], 0)), Y, 0.0, PenaltyConfig(p=p),
                        sample_weight=w, fit_intercept=True)
        R = Y - null.intercept[None, :]
    else:
        R = Y.copy()
    if math.isinf(p):
        G = np.zeros_like(R)
        rows = np.argmax(np.abs(np.where(w[:, None] > 0, R, 0.0)), axis=0)
        G[rows, np.arange(T)] = np.sign(R[rows, np.arange(T)])
        return -X.T @ G
    if p == 1:
        return -X.T @ (w[:, None] * np.sign(R))
    return -X.T @ (w[:, None] * p * np.abs(R) ** (p - 1) * np.sign(R))


def lambda_max(X, Y, w, pen, fit_intercept=True):
    """Smallest penalty level at which every group is zero (from the null-model gradient)."""
    G = _null_gradient(X, Y, w, float(pen.p), fit_intercept)
    if G.shape[0] == 0:
        return 0.0
    return float(np.max(np.linalg.norm(G, axis=1))) / pen.l1_ratio


def lambda_grid(lmax, n_lambdas=100, min_ratio=1e-4):
    if lmax <= 0:
        return np.array([0.0])
    return np.geomspace(lmax, lmax * min_ratio, n_lambdas)


def kkt_residuals(X, Y, w, B, b, lam, l1_ratio=1.0, fit_intercept=True):
    """Group-lasso optimality residuals for the weighted least squares loss.

    Returns ``(active, inactive, intercept)``: the largest
    ``||grad_j + lam beta_j / ||beta_j|| ||`` over active groups, the largest
    ``||grad_j|| / lam - 1`` over inactive groups (``<= 0`` when satisfied)
    and the intercept gradient norm.
    """
    R = Y - X @ B - (b[None, :] if fit_intercept else 0.0)
    G = -2.0 * X.T @ (w[:, None] * R) + lam * (1 - l1_ratio) * B
    la = lam * l1_ratio
    norms = np.linalg.norm(B, axis=1)
    act = norms > ACTIVE_TOL
    active = 0.0
    if np.any(act):
        active = float(np.max(np.linalg.norm(G[act] + la * B[act] / norms[act, None], axis=1)))
    inactive = -math.inf
    if np.any(~act):
        gn = np.linalg.norm(G[~act], axis=1)
        inactive = float(np.max(gn / la - 1.0)) if la > 0 else float(np.max(gn))
    icpt = float(np.linalg.norm(-2.0 * (w @ R))) if fit_intercept else 0.0
    return active, inactive, icpt


@dataclass
class PathEntry:
    lam: float
    coef: CoefficientMatrix
    w2_distance: float
    w2_r2: float
    objective: float
    kkt: tuple = None

    @property
    def n_active(self):
        return len(self.coef.active_groups)


@dataclass
class FitPath:
    """Fits along a decreasing penalty grid, with diagnostics per entry."""

    entries: list
    metadata: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def __getitem__(self, i):
        return self.entries[i]

    @property
    def lambdas(self):
        return np.array([e.lam for e in self.entries])

    def by_size(self, max_size):
        """For each size ``0..max_size``, the least-penalised entry with at most that many groups."""
        out = []
        for j in range(max_size + 1):
            ok = [e for e in self.entries if e.n_active <= j]
            out.append(ok[-1] if ok else None)
        return out


def _standardise(X, w, fit_intercept):
    wn = w / w.sum()
    mean = wn @ X if fit_intercept else np.zeros(X.shape[1])
    Xc = X - mean
    scale = np.sqrt(wn @ (Xc * Xc))
    scale = np.where(scale > 0, scale, 1.0)
    return Xc / scale, mean, scale


def _unstandardise(coef, mean, scale, fit_intercept):
    beta = coef.beta / scale[:, None]
    intercept = None
    if fit_intercept:
        intercept = coef.intercept - mean @ beta
    return CoefficientMatrix(beta, intercept, coef.objective, coef.n_iter, coef.converged,
                             coef.history)


def _polish(X, Y, w, lam, pen, fit_intercept, coef, kkt_tol, rounds=4):
    """Continue block descent with tighter tolerances until the KKT residuals fall below ``kkt_tol``.

    The coefficient-change stopping rule does not bound the gradient on
    large, badly scaled problems; this closes the gap.
    """
    def check(c):
        return kkt_residuals(X, Y, w, c.beta, c.intercept if fit_intercept else None, lam,
                             pen.l1_ratio, fit_intercept)

    kkt = check(coef)
    tol = 1e-8
    for _ in range(rounds):
        if kkt[0] <= kkt_tol and kkt[1] <= kkt_tol:
            break
        tol /= 100.0
        more = solve_p2(X, Y, lam, pen, sample_weight=w, fit_intercept=fit_intercept, init=coef,
                        tol=tol)
        more.n_iter += coef.n_iter
        coef, kkt = more, check(more)
    return coef, kkt


def fit_slim_a(mu, nb, pen=PenaltyConfig(), fit_intercept=True, standardize=True,
               warm_start=True, solver_options=None, kkt_tol=1e-7):
    """Fit the SLIM-a surrogate along a penalty path.

    Parameters
    ----------
    mu : array of shape (N, T)
        Original predictions at the neighborhood points.
    nb : Neighborhood or array of shape (N, k)
    pen : PenaltyConfig

    Returns
    -------
    FitPath
        Coefficients are on the original scale of ``nb.points``. The recorded
        objective and KKT residuals refer to the standardised design; for the
        group lasso at p = 2 each entry is refined until both KKT residuals
        are at most ``kkt_tol``.
    """
    if not isinstance(nb, Neighborhood):
        pts = as_matrix(nb, name="points")
        nb = Neighborhood(pts, pts.mean(axis=0), np.ones(pts.shape[0]))
    mu = check_ensemble(mu, name="mu")
    Z, w = nb.points, nb.weights
    if Z.shape[0] != mu.shape[0]:
        raise ShapeMismatchError("neighborhood points vs ensemble rows", Z.shape, mu.shape)
    N, k = Z.shape
    if N <= k:
        warnings.warn(f"neighborhood has {N} points for {k} candidate covariates; "
                      "coefficients are not identified", IdentificationWarning, stacklevel=2)
    if standardize:
        Xs, mean, scale = _standardise(Z, w, fit_intercept)
    else:
        Xs, mean, scale = Z, np.zeros(k), np.ones(k)
    opts = dict(solver_options or {})
    p = float(pen.p)
    if pen.lambdas is None:
        lams = lambda_grid(lambda_max(Xs, mu, w, pen, fit_intercept), pen.n_lambdas,
                           pen.lambda_min_ratio)
    else:
        lams = np.array(pen.lambdas)

    null_coef = None
    if fit_intercept:
        null_coef = solve_lp(np.zeros((N, 0)), mu, 0.0, PenaltyConfig(p=p), sample_weight=w,
                             fit_intercept=True)
        null_pred = np.broadcast_to(null_coef.intercept, mu.shape)
    else:
        null_pred = np.zeros_like(mu)
    null_w2 = ensemble_distance(mu, null_pred, 2.0)

    entries = []
    prev = None
    for lam in lams:
        init = prev if warm_start else None
        if init is None and null_coef is not None:
            init = CoefficientMatrix(np.zeros((k, mu.shape[1])), null_coef.intercept.copy())
        coef = solve_lp(Xs, mu, float(lam), pen, sample_weight=w, fit_intercept=fit_intercept,
                        init=init, **opts)
        kkt = None
        if p == 2 and pen.family == "group-lasso":
            coef, kkt = _polish(Xs, mu, w, float(lam), pen, fit_intercept, coef, kkt_tol)
        prev = coef
        orig = _unstandardise(coef, mean, scale, fit_intercept)
        nu = orig.predict(Z)
        w2 = ensemble_distance(mu, nu, 2.0)
        r2 = r2_from_distances(w2 ** 2, null_w2 ** 2)
        entries.append(PathEntry(float(lam), orig, w2, r2, coef.objective, kkt))
    meta = {
        "p": p, "penalty": pen.family, "n_points": N, "n_features": k,
        "n_draws": mu.shape[1], "null_w2": null_w2,
        "iterations": [e.coef.n_iter for e in entries],
        "converged": [bool(e.coef.converged) for e in entries],
    }
    return FitPath(entries, meta)


class SlimA(BaseEstimator, RegressorMixin):
    """Sparse model-agnostic surrogate of a prediction ensemble.

    Fit with the neighborhood design ``Z`` (N, k) and the original
    predictions ``mu`` (N, T). ``predict`` returns the surrogate ensemble of
    the selected path entry (by default the last, least penalised one, or the
    least penalised with at most ``max_size`` active covariates).
    """

    def __init__(self, p=2.0, penalty="group-lasso", lambdas=None, n_lambdas=100,
                 lambda_min_ratio=1e-4, mcp_gamma=1.1, l1_ratio=1.0, fit_intercept=True,
                 standardize=True, max_size=None):
        self.p = p
        self.penalty = penalty
        self.lambdas = lambdas
        self.n_lambdas = n_lambdas
        self.lambda_min_ratio = lambda_min_ratio
        self.mcp_gamma = mcp_gamma
        self.l1_ratio = l1_ratio
        self.fit_intercept = fit_intercept
        self.standardize = standardize
        self.max_size = max_size

    def _penalty_config(self):
        lams = None if self.lambdas is None else tuple(np.atleast_1d(self.lambdas))
        return PenaltyConfig(self.penalty, lams, self.n_lambdas, self.lambda_min_ratio,
                             self.mcp_gamma, self.l1_ratio, self.p)

    def fit(self, Z, mu, sample_weight=None):
        Z = as_matrix(Z, name="Z")
        mu = check_ensemble(mu, name="mu")
        w = check_weights(sample_weight, Z.shape[0])
        nb = Neighborhood(Z, Z.mean(axis=0), w)
        self.path_ = fit_slim_a(mu, nb, self._penalty_config(), self.fit_intercept,
                                self.standardize)
        self.n_features_in_ = Z.shape[1]
        self.n_draws_ = mu.shape[1]
        entry = self.path_[-1]
        if self.max_size is not None:
            entry = self.path_.by_size(self.max_size)[self.max_size] or self.path_[0]
        self.entry_ = entry
        self.coef_ = entry.coef.beta
        self.intercept_ = entry.coef.intercept
        return self

    def predict(self, Z):
        check_is_fitted(self, "coef_")
        return self.entry_.coef.predict(Z)

    def score(self, Z, mu, sample_weight=None):
        """Negative 2-Wasserstein distance between ``mu`` and the surrogate ensemble."""
        return -ensemble_distance(check_ensemble(mu), self.predict(Z), 2.0)
