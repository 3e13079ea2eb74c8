"""Model-preserving sparse surrogates: binary masks over the original coefficient draws.

The surrogate keeps the original draws and only switches covariates on or
off, ``nu_z^(t) = sum_j z_j alpha_j theta_j^(t)`` with ``alpha`` in
``{0, 1}^k``. For a fixed coupling the squared 2-Wasserstein loss is a
quadratic in ``alpha``; :func:`quadratic_slim_p` alternates between solving
the transport problem and minimising that quadratic.
"""

import itertools
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator

from ._validation import ShapeMismatchError, as_matrix, check_ensemble, check_weights
from .ensemble import Neighborhood, ParameterDraws, as_draws, predict_linear
from .ot import TransportPlan, ensemble_plan
from .slim_a import CoefficientMatrix, group_update

ENUMERATION_CAP = 10 ** 6
MODES = ("exact", "relaxed")


@dataclass(frozen=True)
class SelectionMask:
    alpha: np.ndarray
    budget: int = None

    def __post_init__(self):
        a = np.asarray(self.alpha)
        if a.ndim != 1 or not np.all((a == 0) | (a == 1)):
            raise ValueError("a selection mask holds only zeros and ones")
        a = a.astype(np.int8)
        if self.budget is not None and a.sum() > self.budget:
            raise ValueError(f"mask selects {int(a.sum())} covariates, above the budget {self.budget}")
        object.__setattr__(self, "alpha", a)

    @property
    def active(self):
        return tuple(int(j) for j in np.flatnonzero(self.alpha))

    @property
    def size(self):
        return int(self.alpha.sum())


@dataclass(frozen=True)
class SufficientStatistics:
    """Moments for the loss ``alpha' S_zz alpha - 2 alpha' S_zmu + const_term`` at a fixed plan.

    The loss equals the weighted squared transport cost divided by the
    number of observations.
    """

    S_zz: np.ndarray
    S_zmu: np.ndarray
    const_term: float

    def objective(self, alpha, include_const=False):
        a = np.asarray(alpha, dtype=np.float64)
        val = float(a @ self.S_zz @ a - 2.0 * a @ self.S_zmu)
        return val + self.const_term if include_const else val


def _coerce_neighborhood(nb):
    if isinstance(nb, Neighborhood):
        return nb
    pts = as_matrix(nb, name="points")
    return Neighborhood(pts, pts.mean(axis=0), np.ones(pts.shape[0]))


def _check_inputs(nb, draws, mu):
    nb = _coerce_neighborhood(nb)
    draws = as_draws(draws)
    mu = check_ensemble(mu, name="mu")
    if nb.points.shape[1] != draws.n_features:
        raise ShapeMismatchError("neighborhood columns vs coefficient rows",
                                 nb.points.shape, (nb.size, draws.n_features))
    if mu.shape != (nb.size, draws.n_draws):
        raise ShapeMismatchError("mu vs (points, draws)", mu.shape, (nb.size, draws.n_draws))
    return nb, draws, mu


def _coupling(plan, T):
    if isinstance(plan, TransportPlan):
        return plan.gamma
    g = as_matrix(plan, name="plan")
    if g.shape != (T, T):
        raise ShapeMismatchError("plan vs draws", g.shape, (T, T))
    return g


def build_stats(nb, draws, mu, plan):
    """Quadratic-form moments of the weighted squared transport loss at a fixed coupling.

    Parameters
    ----------
    nb : Neighborhood or array of shape (N, k)
    draws : ParameterDraws or array of shape (k, T)
        Intercept draws, if present, are always kept and enter as an offset.
    mu : array of shape (N, T)
    plan : TransportPlan or array of shape (T, T)
        Coupling ``gamma[t, s]`` between atom ``t`` of ``mu`` and atom ``s``
        of the surrogate; rows and columns must sum to ``1/T``.
    """
    nb, draws, mu = _check_inputs(nb, draws, mu)
    N, T = mu.shape
    gamma = _coupling(plan, T)
    w = nb.weights
    # Zs[i, j, s] = z_ij theta_j^(s)
    Zs = nb.points[:, :, None] * draws.theta[None, :, :]
    S_zz = np.einsum("i,ijs,ils->jl", w, Zs, Zs) / (N * T)
    S_zz = (S_zz + S_zz.T) / 2
    # target seen by surrogate atom s: mu^(t) weighted by gamma[t, s]
    moved = mu @ gamma
    if draws.intercept is None:
        S_zmu = np.einsum("i,ijs,is->j", w, Zs, moved) / N
        const = float(w @ np.sum(mu * mu, axis=1)) / (N * T)
    else:
        b = draws.intercept
        mass = gamma.sum(axis=0)
        S_zmu = np.einsum("i,ijs,is->j", w, Zs, moved - b[None, :] * mass[None, :]) / N
        sq = (mu * mu) @ gamma - 2.0 * moved * b[None, :] + (b * b * mass)[None, :]
        const = float(w @ sq.sum(axis=1)) / N
    return SufficientStatistics(S_zz, S_zmu, const)


def direct_loss(nb, draws, mu, plan, alpha):
    """``(1/N) sum_z w_z sum_{t,s} gamma_ts (mu_z^(t) - nu_z^(s))^2`` by explicit double sum."""
    nb, draws, mu = _check_inputs(nb, draws, mu)
    N, T = mu.shape
    gamma = _coupling(plan, T)
    nu = masked_predictions(nb.points, draws, alpha)
    diff = mu[:, :, None] - nu[:, None, :]
    return float(np.einsum("i,its,ts->", nb.weights, diff * diff, gamma)) / N


def masked_predictions(points, draws, alpha):
    draws = as_draws(draws)
    a = np.asarray(alpha, dtype=np.float64)
    return predict_linear(points, ParameterDraws(draws.theta * a[:, None], draws.intercept))


def _combination_count(k, budget):
    return sum(math.comb(k, j) for j in range(budget + 1))


def _enumerate_masks(stats, budget, chunk=20000):
    S, s = stats.S_zz, stats.S_zmu
    k = len(s)
    best_val, best = 0.0, ()
    for j in range(1, budget + 1):
        combos = itertools.combinations(range(k), j)
        while True:
            block = np.fromiter(itertools.chain.from_iterable(itertools.islice(combos, chunk)),
                                dtype=np.intp)
            if block.size == 0:
                break
            idx = block.reshape(-1, j)
            vals = S[idx[:, :, None], idx[:, None, :]].sum(axis=(1, 2)) - 2.0 * s[idx].sum(axis=1)
            i = int(np.argmin(vals))
            # strict improvement keeps the smallest, then lexicographically first, mask
            if vals[i] < best_val - 1e-14 * max(1.0, abs(best_val)):
                best_val, best = float(vals[i]), tuple(int(v) for v in idx[i])
    return best, best_val


def _relaxation_bound(S, s, fixed_one, free, budget_left, iters=60):
    """Lower bound on the quadratic over the box relaxation via Frank-Wolfe duality gaps."""
    x = np.zeros(len(s))
    x[fixed_one] = 1.0
    free = np.asarray(free, dtype=np.intp)

    def f(v):
        return float(v @ S @ v - 2.0 * v @ s)

    bound = -math.inf
    for it in range(iters):
        g = 2.0 * (S @ x - s)
        gf = g[free]
        order = np.argsort(gf, kind="stable")[:budget_left]
        pick = order[gf[order] < 0]
        y = np.zeros_like(x)
        y[fixed_one] = 1.0
        y[free[pick]] = 1.0
        d = y - x
        fx = f(x)
        bound = max(bound, fx + float(g @ d))
        curv = float(d @ S @ d)
        if curv <= 0 or float(g @ d) >= 0:
            break
        x = x + min(1.0, -float(g @ d) / (2.0 * curv)) * d
    return bound


def _branch_and_bound(stats, budget):
    S, s = stats.S_zz, stats.S_zmu
    k = len(s)
    best = {"val": 0.0, "mask": ()}

    def value(mask):
        idx = list(mask)
        return float(S[np.ix_(idx, idx)].sum() - 2.0 * s[idx].sum()) if idx else 0.0

    def visit(pos, chosen):
        val = value(chosen)
        if val < best["val"] - 1e-14 * max(1.0, abs(best["val"])) or (
                abs(val - best["val"]) <= 1e-14 * max(1.0, abs(best["val"]))
                and (len(chosen), chosen) < (len(best["mask"]), best["mask"])):
            best["val"], best["mask"] = val, chosen
        left = budget - len(chosen)
        if pos >= k or left == 0:
            return
        if _relaxation_bound(S, s, list(chosen), range(pos, k), left) > best["val"] + 1e-12:
            return
        for j in range(pos, k):
            visit(j + 1, chosen + (j,))

    visit(0, ())
    return best["mask"], best["val"]


def solve_exact_mask(stats, budget=None, enumeration_cap=ENUMERATION_CAP):
    """Binary ``alpha`` minimising ``alpha' S_zz alpha - 2 alpha' S_zmu`` with at most ``budget`` ones.

    Exhaustive when the number of candidate masks is within
    ``enumeration_cap``, depth-first branch and bound otherwise. Ties go
    to the smaller, then lexicographically first, mask.
    """
    k = len(stats.S_zmu)
    budget = k if budget is None else int(budget)
    if not 0 <= budget <= k:
        raise ValueError(f"budget must lie in [0, {k}], got {budget}")
    if _combination_count(k, budget) <= enumeration_cap:
        chosen, _ = _enumerate_masks(stats, budget)
    else:
        chosen, _ = _branch_and_bound(stats, budget)
    alpha = np.zeros(k, dtype=np.int8)
    alpha[list(chosen)] = 1
    return SelectionMask(alpha, budget)


class DivergenceError(RuntimeError):
    pass


@dataclass
class RelaxedSolution:
    alpha: np.ndarray
    mask: SelectionMask
    objective: float
    n_sweeps: int
    history: list = field(default_factory=list)


def _scalar_penalty(a, lam, family, gamma):
    a = abs(a)
    if family == "group-lasso":
        return lam * a
    return lam * a - a * a / (2 * gamma) if a <= gamma * lam else 0.5 * gamma * lam ** 2


def relaxed_objective(stats, alpha, lam, family="group-lasso", mcp_gamma=1.1):
    return stats.objective(alpha) + sum(_scalar_penalty(a, lam, family, mcp_gamma) for a in alpha)


def _support_solution(S, s, alpha, lam):
    """Lasso minimiser with the support and signs of ``alpha``, or ``None`` if KKT fails.

    On a fixed sign pattern the stationarity condition is the linear system
    ``S_AA a = s_A - lam/2 sign_A``; coordinate descent only needs to find
    the pattern, which it does long before it converges on ill-conditioned
    problems.
    """
    A = np.flatnonzero(alpha)
    if A.size == 0:
        return None
    sign = np.sign(alpha[A])
    sol = np.linalg.lstsq(S[np.ix_(A, A)], s[A] - 0.5 * lam * sign, rcond=None)[0]
    if np.any(np.sign(sol) != sign):
        return None
    x = np.zeros_like(alpha)
    x[A] = sol
    grad = 2.0 * (S @ x - s)
    rest = np.setdiff1d(np.arange(len(s)), A)
    if rest.size and np.max(np.abs(grad[rest])) > lam * (1 + 1e-9) + 1e-14:
        return None
    return x


def solve_relaxed_mask(stats, lam, family="group-lasso", mcp_gamma=1.1, box=False,
                       init=None, threshold=0.5, tol=1e-10, max_sweeps=10000):
    """Penalised real-valued ``alpha`` by coordinate descent, then rounded at ``threshold``.

    Minimises ``alpha' S_zz alpha - 2 alpha' S_zmu + sum_j P(|alpha_j|)``
    with ``P`` the lasso (``family="group-lasso"``; a group of one) or MCP
    penalty. ``box=True`` restricts each coordinate to ``[0, 1]``.

    Raises
    ------
    DivergenceError
        If a sweep increases the objective, or the iterates leave the
        finite range (an unbounded program, e.g. an indefinite ``S_zz``).
    """
    S, s = stats.S_zz, stats.S_zmu
    k = len(s)
    alpha = np.zeros(k) if init is None else np.array(init, dtype=np.float64)
    obj = relaxed_objective(stats, alpha, lam, family, mcp_gamma)
    history = [obj]
    lasso, half = family == "group-lasso" or lam == 0, lam / 2.0
    sweeps = 0
    for sweeps in range(1, max_sweeps + 1):
        max_delta = 0.0
        for j in range(k):
            c = S[j, j]
            if c <= 0:
                continue
            u = s[j] - (S[j] @ alpha - c * alpha[j])
            if lasso:
                new = math.copysign(max(abs(u) - half, 0.0), u) / c
            else:
                new = float(group_update(np.array([u]), c, lam, family, mcp_gamma)[0])
            if box:
                cands = [min(max(new, 0.0), 1.0), 0.0, 1.0]
                new = min(cands, key=lambda a: c * a * a - 2 * u * a
                          + _scalar_penalty(a, lam, family, mcp_gamma))
            max_delta = max(max_delta, abs(new - alpha[j]))
            alpha[j] = new
        with np.errstate(over="ignore", invalid="ignore"):
            new_obj = relaxed_objective(stats, alpha, lam, family, mcp_gamma)
        if not (np.isfinite(new_obj) and np.all(np.isfinite(alpha))):
            raise DivergenceError(f"relaxed iterates left the finite range at sweep {sweeps} "
                                  f"(lambda={lam!r}); is S_zz positive semidefinite?")
        if new_obj > obj + 1e-10 * max(1.0, abs(obj)):
            raise DivergenceError(f"relaxed objective rose from {obj!r} to {new_obj!r} "
                                  f"at sweep {sweeps} (lambda={lam!r})")
        obj = new_obj
        history.append(obj)
        if max_delta <= tol * max(1.0, float(np.max(np.abs(alpha)))):
            break
        if lasso and not box and sweeps % 5 == 0:
            exact = _support_solution(S, s, alpha, lam)
            if exact is not None:
                exact_obj = relaxed_objective(stats, exact, lam, family, mcp_gamma)
                if exact_obj <= obj + 1e-12 * max(1.0, abs(obj)):
                    alpha, obj = exact, exact_obj
                    history.append(obj)
                    break
    mask = SelectionMask((alpha > threshold).astype(np.int8))
    return RelaxedSolution(alpha, mask, obj, sweeps, history)


def relaxed_lambda_max(stats):
    """Smallest lasso level with ``alpha = 0`` optimal."""
    return float(np.max(np.abs(2.0 * stats.S_zmu))) if len(stats.S_zmu) else 0.0


@dataclass
class SlimPEntry:
    """One mask from the alternation, labelled by its budget or penalty level."""

    budget: int
    lam: float
    mask: SelectionMask
    coef: CoefficientMatrix
    w2_distance: float
    n_iter: int
    converged: bool
    history: list = field(default_factory=list)


@dataclass
class SlimPResult:
    entries: list
    metadata: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def __getitem__(self, i):
        return self.entries[i]

    def by_budget(self, budget):
        for e in self.entries:
            if e.budget == budget:
                return e
        raise KeyError(budget)


def _scaled(nb, values):
    return np.sqrt(nb.weights)[:, None] * values


def masked_distance(nb, draws, mu, alpha, solver="auto"):
    """Realised (kernel-weighted) 2-Wasserstein distance of a mask, with its plan."""
    nu = masked_predictions(nb.points, draws, alpha)
    plan = ensemble_plan(_scaled(nb, mu), _scaled(nb, nu), 2.0, solver)
    return math.sqrt(max(plan.objective, 0.0)), plan


def _alternate(nb, draws, mu, update, solver, max_iter):
    k = draws.n_features
    alpha = np.ones(k, dtype=np.int8)
    dist, plan = masked_distance(nb, draws, mu, alpha, solver)
    seen = {}
    best = None
    history = []
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        stats = build_stats(nb, draws, mu, plan)
        new = update(stats).alpha
        key = new.tobytes()
        dist, plan = masked_distance(nb, draws, mu, new, solver)
        history.append(dist)
        if best is None or dist < best[0]:
            best = (dist, new)
        if key in seen or np.array_equal(new, alpha):
            converged = True
            break
        seen[key] = it
        alpha = new
    return best[1], best[0], it, converged, history


def _entry(nb, draws, mu, alpha, budget, lam, n_iter, converged, history, solver):
    dist, _ = masked_distance(nb, draws, mu, alpha, solver)
    beta = draws.theta * alpha[:, None].astype(np.float64)
    coef = CoefficientMatrix(beta, draws.intercept)
    return SlimPEntry(budget, lam, SelectionMask(alpha, budget), coef, dist, n_iter, converged,
                      history)


def quadratic_slim_p(nb, draws, mu, mode="exact", budgets=None, lambdas=None,
                     family="group-lasso", mcp_gamma=1.1, box=False, solver="auto",
                     max_iter=50, enumeration_cap=ENUMERATION_CAP):
    """Alternate transport plans and mask updates, one run per budget or penalty level.

    Starting from the full model, each round solves the transport problem
    for the current surrogate, rebuilds the quadratic moments and updates the
    mask (exactly under a budget, or by the rounded relaxed program at a
    penalty level). A run stops when the mask repeats, on a cycle, or after
    ``max_iter`` rounds, and keeps the best mask seen by realised distance.

    Parameters
    ----------
    mode : {"exact", "relaxed"}
    budgets : iterable of int, optional
        Exact mode; defaults to ``0..k``.
    lambdas : iterable of float, optional
        Relaxed mode; defaults to 100 log-spaced levels from the all-zero
        level (at the full-model plan) down to 1e-12 times it. Covariates
        whose contributions at the neighborhood are tiny only enter at very
        small levels, hence the deep grid.
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}; choose from {MODES}")
    nb, draws, mu = _check_inputs(nb, draws, mu)
    k = draws.n_features
    entries = []
    if mode == "exact":
        budgets = range(k + 1) if budgets is None else [int(b) for b in budgets]
        for budget in budgets:
            if not 0 <= budget <= k:
                raise ValueError(f"budget must lie in [0, {k}], got {budget}")
            alpha, _, n, conv, hist = _alternate(
                nb, draws, mu, lambda st, b=budget: solve_exact_mask(st, b, enumeration_cap),
                solver, max_iter)
            entries.append(_entry(nb, draws, mu, alpha, budget, None, n, conv, hist, solver))
    else:
        if lambdas is None:
            _, plan = masked_distance(nb, draws, mu, np.ones(k), solver)
            lmax = relaxed_lambda_max(build_stats(nb, draws, mu, plan))
            lambdas = np.geomspace(lmax, lmax * 1e-12, 100) if lmax > 0 else np.array([0.0])
        for lam in lambdas:
            alpha, _, n, conv, hist = _alternate(
                nb, draws, mu,
                lambda st, l=float(lam): solve_relaxed_mask(st, l, family, mcp_gamma, box).mask,
                solver, max_iter)
            entries.append(_entry(nb, draws, mu, alpha, int(alpha.sum()), float(lam), n, conv,
                                  hist, solver))
    unconverged = [i for i, e in enumerate(entries) if not e.converged]
    if unconverged:
        warnings.warn(f"{len(unconverged)} alternation run(s) hit the iteration cap",
                      RuntimeWarning, stacklevel=2)
    meta = {"mode": mode, "n_points": nb.size, "n_features": k, "n_draws": draws.n_draws,
            "solver": solver}
    return SlimPResult(entries, meta)


def selection_order(result):
    """Covariates in the order they first appear along a result's entries (by increasing size)."""
    order = []
    for e in sorted(result.entries, key=lambda e: (e.mask.size, -(e.lam or 0.0))):
        for j in e.mask.active:
            if j not in order:
                order.append(j)
    return order


class SlimP(BaseEstimator):
    """Model-preserving sparse surrogate.

    ``fit(Z, mu, theta, intercept=None, sample_weight=None)`` takes the
    neighborhood design, the original predictions ``(N, T)`` and the
    original draws ``(k, T)``. ``predict(Z)`` uses the mask of the entry
    with the smallest distance among those of size at most ``budget``.
    """

    def __init__(self, mode="exact", budgets=None, lambdas=None, penalty="group-lasso",
                 mcp_gamma=1.1, box=False, solver="auto", max_iter=50, budget=None):
        self.mode = mode
        self.budgets = budgets
        self.lambdas = lambdas
        self.penalty = penalty
        self.mcp_gamma = mcp_gamma
        self.box = box
        self.solver = solver
        self.max_iter = max_iter
        self.budget = budget

    def fit(self, Z, mu, theta=None, intercept=None, sample_weight=None):
        if theta is None:
            raise ValueError("SlimP needs the original coefficient draws theta")
        Z = as_matrix(Z, name="Z")
        w = check_weights(sample_weight, Z.shape[0])
        nb = Neighborhood(Z, Z.mean(axis=0), w)
        self.draws_ = ParameterDraws(theta, intercept)
        self.result_ = quadratic_slim_p(nb, self.draws_, mu, self.mode, self.budgets,
                                        self.lambdas, self.penalty, self.mcp_gamma, self.box,
                                        self.solver, self.max_iter)
        entries = self.result_.entries
        if self.budget is not None:
            ok = [e for e in entries if e.mask.size <= self.budget]
            entries = ok or entries
        self.entry_ = min(entries, key=lambda e: (e.w2_distance, e.mask.size))
        self.mask_ = self.entry_.mask
        self.n_features_in_ = Z.shape[1]
        return self

    def predict(self, Z):
        return masked_predictions(Z, self.draws_, self.mask_.alpha)
