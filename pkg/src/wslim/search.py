"""Model-size-targeted subset searches: best subsets, simulated annealing, backward stepwise.

Each search scores a subset of active covariates by the distance between
the original predictions and the surrogate built by a coefficient rule:
``fixed`` keeps the original draws on the subset, ``adaptive`` refits a
per-draw least squares regression on it.
"""

import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator

from ._validation import as_matrix, check_weights
from .ensemble import Neighborhood, ParameterDraws, as_draws, make_rng
from .ot import auto_solver, ensemble_distance
from .slim_a import CoefficientMatrix
from .slim_p import _check_inputs

RULES = ("fixed", "adaptive")
METHODS = ("best-subsets", "annealing", "stepwise")
BEST_SUBSETS_CAP = 20


@dataclass(frozen=True)
class CoefficientRule:
    """How a subset of active covariates becomes surrogate coefficient draws.

    ``fit_intercept`` only affects the adaptive rule; the fixed rule keeps
    the original intercept draws when there are any.
    """

    kind: str = "fixed"
    fit_intercept: bool = False

    def __post_init__(self):
        if self.kind not in RULES:
            raise ValueError(f"unknown coefficient rule {self.kind!r}; choose from {RULES}")

    def coefficients(self, nb, draws, mu, active):
        k, T = draws.n_features, draws.n_draws
        active = list(active)
        if self.kind == "fixed":
            beta = np.zeros((k, T))
            beta[active] = draws.theta[active]
            return CoefficientMatrix(beta, draws.intercept)
        sw = np.sqrt(nb.weights)[:, None]
        cols = nb.points[:, active]
        if self.fit_intercept:
            cols = np.hstack([np.ones((nb.size, 1)), cols])
        coef = np.linalg.pinv(sw * cols) @ (sw * mu)
        beta = np.zeros((k, T))
        if self.fit_intercept:
            beta[active] = coef[1:]
            return CoefficientMatrix(beta, coef[0])
        beta[active] = coef
        return CoefficientMatrix(beta, None)


def as_rule(rule):
    return rule if isinstance(rule, CoefficientRule) else CoefficientRule(rule)


@dataclass(frozen=True)
class AnnealingSchedule:
    temperatures: tuple
    iters_per_temp: int

    def __post_init__(self):
        temps = tuple(float(r) for r in self.temperatures)
        if not temps or any(r <= 0 for r in temps):
            raise ValueError("temperatures must be positive")
        if any(b >= a for a, b in zip(temps, temps[1:])):
            raise ValueError("temperatures must be strictly decreasing")
        if int(self.iters_per_temp) < 1:
            raise ValueError("iters_per_temp must be at least 1")
        object.__setattr__(self, "temperatures", temps)
        object.__setattr__(self, "iters_per_temp", int(self.iters_per_temp))

    @classmethod
    def default(cls, initial_distance, k, decay=0.9, n_temps=30, sweeps=50):
        r0 = initial_distance if initial_distance > 0 else 1.0
        return cls(tuple(r0 * decay ** i for i in range(n_temps)), sweeps * k)


def acceptance_probability(new_distance, old_distance, temperature):
    """Metropolis probability ``min(1, exp(-(new - old) / r))`` for a symmetric proposal."""
    delta = new_distance - old_distance
    if delta <= 0:
        return 1.0
    return math.exp(-delta / temperature)


@dataclass
class SizeEntry:
    size: int
    active: tuple
    coef: CoefficientMatrix
    distance: float
    method: str


@dataclass
class SizePath:
    entries: dict
    metadata: dict = field(default_factory=dict)

    def __getitem__(self, size):
        return self.entries[size]

    def __iter__(self):
        return (self.entries[j] for j in sorted(self.entries))

    def __len__(self):
        return len(self.entries)

    @property
    def sizes(self):
        return sorted(self.entries)

    def inclusion_order(self):
        """Covariates by the smallest size at which each is active."""
        order = []
        for e in self:
            order.extend(j for j in e.active if j not in order)
        return order


class _Scorer:
    """Distance of each subset's surrogate to the original predictions, cached by subset."""

    def __init__(self, nb, draws, mu, rule, p, solver):
        self.nb, self.draws, self.mu = nb, draws, mu
        self.rule = as_rule(rule)
        self.p = float(p)
        self.solver = auto_solver(*mu.shape) if solver == "auto" else solver
        self.scale = nb.weights[:, None] ** (1.0 / self.p)
        self.target = self.scale * mu
        self.cache = {}

    def coefficients(self, active):
        return self.rule.coefficients(self.nb, self.draws, self.mu, active)

    def __call__(self, active):
        key = tuple(sorted(active))
        hit = self.cache.get(key)
        if hit is None:
            nu = self.coefficients(key).predict(self.nb.points)
            hit = ensemble_distance(self.target, self.scale * nu, self.p, self.solver)
            self.cache[key] = hit
        return hit

    def entry(self, active, method):
        active = tuple(sorted(active))
        return SizeEntry(len(active), active, self.coefficients(active), self(active), method)


def _map(fn, items, threads):
    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


def _default_sizes(k):
    return list(range(1, k)) if k > 1 else [1]


def best_subsets(nb, draws, mu, rule="fixed", p=2.0, solver="auto", sizes=None,
                 cap=BEST_SUBSETS_CAP, threads=1):
    """Score every subset of each size and keep the closest; ties go to the first in lexicographic order.

    Raises
    ------
    ValueError
        When ``k`` exceeds ``cap``; use :func:`simulated_annealing` or
        :func:`backward_stepwise` instead, or raise the cap deliberately.
    """
    nb, draws, mu = _check_inputs(nb, draws, mu)
    k = draws.n_features
    if k > cap:
        raise ValueError(f"best subsets over k={k} covariates exceeds the enumeration cap {cap}; "
                         "use simulated annealing or backward stepwise, or raise the cap")
    score = _Scorer(nb, draws, mu, rule, p, solver)
    entries = {}
    for j in (sizes or _default_sizes(k)):
        subsets = list(itertools.combinations(range(k), j))
        dists = _map(score, subsets, threads)
        best = min(range(len(subsets)), key=lambda i: (dists[i], i))
        entries[j] = score.entry(subsets[best], "best-subsets")
    return SizePath(entries, {"method": "best-subsets", "rule": score.rule.kind,
                              "solver": score.solver, "evaluations": len(score.cache)})


def _mask_of(active):
    m = 0
    for j in active:
        m |= 1 << j
    return m


def _anneal_chain(score, k, size, schedule, rng):
    """One Metropolis chain over subsets held as bitmasks; returns ``(best distance, best subset)``."""
    current = [int(j) for j in rng.choice(k, size=size, replace=False)]
    inactive = [j for j in range(k) if j not in current]
    cache = {}

    def dist(mask):
        d = cache.get(mask)
        if d is None:
            d = cache[mask] = score([j for j in range(k) if mask >> j & 1])
        return d

    mask = _mask_of(current)
    cur_d = dist(mask)
    best = (cur_d, tuple(sorted(current)))
    if not inactive:
        return best
    if schedule is None:
        schedule = AnnealingSchedule.default(cur_d, k)
    n_in = len(inactive)
    for r in schedule.temperatures:
        L = schedule.iters_per_temp
        outs = rng.integers(size, size=L)
        ins = rng.integers(n_in, size=L)
        us = rng.random(L)
        for a, b, u in zip(outs.tolist(), ins.tolist(), us.tolist()):
            j_out, j_in = current[a], inactive[b]
            prop = mask ^ (1 << j_out) ^ (1 << j_in)
            new_d = dist(prop)
            if u < acceptance_probability(new_d, cur_d, r):
                current[a], inactive[b] = j_in, j_out
                mask, cur_d = prop, new_d
                if cur_d <= best[0]:
                    cand = (cur_d, tuple(sorted(current)))
                    if cand < best:
                        best = cand
    return best


def simulated_annealing(nb, draws, mu, target_size, rule="fixed", schedule=None, seed=0,
                        restarts=1, p=2.0, solver="auto"):
    """Metropolis search over subsets of ``target_size`` with one-in, one-out swaps.

    Every restart runs an independent chain from a random subset; the best
    state seen by any chain is returned as a :class:`SizeEntry`. Without a
    ``schedule`` each chain starts at the distance of its initial subset and
    cools by 0.9 over 30 temperatures with ``50 k`` proposals each.
    """
    nb, draws, mu = _check_inputs(nb, draws, mu)
    k = draws.n_features
    if not 1 <= target_size <= max(k - 1, 1):
        raise ValueError(f"target_size must lie in [1, {max(k - 1, 1)}], got {target_size}")
    score = _Scorer(nb, draws, mu, rule, p, solver)
    best = None
    for child in np.random.SeedSequence(seed).spawn(restarts):
        cand = _anneal_chain(score, k, int(target_size), schedule, make_rng(child))
        if best is None or cand < best:
            best = cand
    return score.entry(best[1], "annealing")


def backward_stepwise(nb, draws, mu, rule="fixed", p=2.0, solver="auto", threads=1):
    """Drop, one at a time, the covariate whose removal leaves the smallest distance (ties: lowest index)."""
    nb, draws, mu = _check_inputs(nb, draws, mu)
    k = draws.n_features
    if k < 2:
        raise ValueError("backward stepwise needs at least two covariates")
    score = _Scorer(nb, draws, mu, rule, p, solver)
    active = list(range(k))
    entries = {}
    removed = []
    while len(active) > 1:
        trials = [[i for i in active if i != j] for j in active]
        dists = _map(score, trials, threads)
        pick = min(range(len(active)), key=lambda i: (dists[i], active[i]))
        removed.append(active[pick])
        active = trials[pick]
        entries[len(active)] = score.entry(active, "stepwise")
    return SizePath(entries, {"method": "stepwise", "rule": score.rule.kind,
                              "solver": score.solver, "removal_order": removed})


def _to_neighborhood(Z, sample_weight):
    Z = as_matrix(Z, name="Z")
    return Neighborhood(Z, Z.mean(axis=0), check_weights(sample_weight, Z.shape[0]))


class SubsetSearch(BaseEstimator):
    """Estimator wrapper around the three searches.

    ``fit(Z, mu, theta, intercept=None, sample_weight=None)`` stores
    ``path_`` (a :class:`SizePath`); for annealing the path holds the sizes
    in ``sizes`` (default ``1..k-1``).
    """

    def __init__(self, method="best-subsets", rule="fixed", p=2.0, solver="auto", sizes=None,
                 restarts=20, random_state=0, threads=1):
        self.method = method
        self.rule = rule
        self.p = p
        self.solver = solver
        self.sizes = sizes
        self.restarts = restarts
        self.random_state = random_state
        self.threads = threads

    def fit(self, Z, mu, theta=None, intercept=None, sample_weight=None):
        if self.method not in METHODS:
            raise ValueError(f"unknown search {self.method!r}; choose from {METHODS}")
        nb = _to_neighborhood(Z, sample_weight)
        draws = ParameterDraws(theta, intercept) if theta is not None else None
        if draws is None:
            raise ValueError("SubsetSearch needs the original coefficient draws theta")
        if self.method == "best-subsets":
            self.path_ = best_subsets(nb, draws, mu, self.rule, self.p, self.solver, self.sizes,
                                      threads=self.threads)
        elif self.method == "stepwise":
            self.path_ = backward_stepwise(nb, draws, mu, self.rule, self.p, self.solver,
                                           self.threads)
        else:
            sizes = self.sizes or _default_sizes(draws.n_features)
            entries = {j: simulated_annealing(nb, draws, mu, j, self.rule, None,
                                              self.random_state, self.restarts, self.p,
                                              self.solver) for j in sizes}
            self.path_ = SizePath(entries, {"method": "annealing", "rule": as_rule(self.rule).kind})
        self.draws_ = as_draws(draws)
        self.n_features_in_ = nb.points.shape[1]
        return self

    def predict(self, Z, size):
        return self.path_[size].coef.predict(Z)


def selection_frequencies(paths, k):
    """Fraction of paths in which each covariate is active, per size."""
    sizes = sorted({j for path in paths for j in path.sizes})
    out = np.zeros((len(sizes), k))
    for path in paths:
        for r, j in enumerate(sizes):
            if j in path.entries:
                out[r, list(path[j].active)] += 1
    return sizes, out / max(len(paths), 1)

