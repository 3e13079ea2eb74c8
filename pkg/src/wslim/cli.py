"""Command-line front end.

Every command reads its settings from an optional JSON config file, lets
flags override them, and writes a result bundle: ``results.jsonl`` in the
output directory, whose first line is a provenance record (schema, command,
seed, config hash and package versions) followed by one record per path
entry, mask, model size or replicate.
"""

import argparse
import dataclasses
import hashlib
import json
import platform
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .ensemble import (
    KernelSpec,
    Neighborhood,
    ParameterDraws,
    empirical_covariance,
    gaussian_neighborhood,
    kernel_weights,
    knn_neighborhood,
)
from .io import SCHEMA, MatrixParseError, dumps, read_matrix, write_jsonl, write_matrix
from .metrics import diagnostics, null_ensemble
from .ot import ensemble_plan
from .search import backward_stepwise, best_subsets, simulated_annealing
from .simulate import average_rows, run_gaussian, run_toy
from .slim_a import PenaltyConfig, fit_slim_a
from .slim_p import quadratic_slim_p

COMMANDS = ("wasserstein", "fit-a", "fit-p", "search", "metrics", "simulate", "neighborhood")
# fields that change where or how fast results are produced, not what they are
NON_SEMANTIC = ("out", "threads")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    """All settings of a run. Paths default to ``None`` and are checked by the command using them."""

    # inputs
    mu: str = None
    nu: str = None
    points: str = None
    theta: str = None
    intercept: str = None
    weights: str = None
    center: str = None
    data: str = None
    # distances
    p: float = 2.0
    solver: str = "auto"
    ground: str = "euclidean"
    null: str = "intercept"
    # agnostic fits
    penalty: str = "group-lasso"
    mcp_gamma: float = 1.1
    l1_ratio: float = 1.0
    lambdas: list = None
    n_lambdas: int = 100
    lambda_min_ratio: float = 1e-4
    fit_intercept: bool = True
    standardize: bool = True
    # masks and searches
    mode: str = "exact"
    budget: list = None
    box: bool = False
    method: str = "best-subsets"
    rule: str = "fixed"
    restarts: int = 20
    target_size: int = None
    # neighborhoods
    construction: str = "gaussian"
    size: int = None
    sample_size: int = None
    centered: bool = True
    kernel: str = "uniform"
    # simulations
    scenario: str = "toy"
    rho: float = 0.5
    replicates: int = 1
    n: int = 1024
    k: int = None
    n_draws: int = 100
    slim_p: bool = True
    # run control
    seed: int = 0
    threads: int = 1
    out: str = "results"

    def semantic(self):
        d = dataclasses.asdict(self)
        for key in NON_SEMANTIC:
            d.pop(key)
        return d

    def config_hash(self):
        blob = json.dumps(self.semantic(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


FIELD_NAMES = {f.name for f in dataclasses.fields(RunConfig)}


def load_config(path=None, overrides=None):
    """Build a :class:`RunConfig` from a JSON object file plus overrides; unknown keys are errors."""
    values = {}
    if path is not None:
        try:
            raw = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: the config must be a JSON object")
        values.update(raw)
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    unknown = sorted(set(values) - FIELD_NAMES)
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
    return RunConfig(**values)


def versions():
    import scipy
    import sklearn
    return {"wslim": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "scikit-learn": sklearn.__version__, "python": platform.python_version()}


def provenance(command, cfg):
    return {"schema": SCHEMA, "record": "provenance", "command": command, "seed": cfg.seed,
            "config_hash": cfg.config_hash(), "config": cfg.semantic(), "versions": versions()}


def _need(cfg, *names):
    missing = [n for n in names if getattr(cfg, n) is None]
    if missing:
        raise ConfigError(f"missing required input(s): {', '.join(missing)}")


def _read_ensemble(path):
    return read_matrix(path, "observations", "draws")


def _read_points(path):
    return read_matrix(path, "points", "covariates")


def _read_draws(cfg):
    theta = read_matrix(cfg.theta, "coefficients", "draws")
    intercept = None
    if cfg.intercept is not None:
        intercept = read_matrix(cfg.intercept, "coefficients", "draws").ravel()
    return ParameterDraws(theta, intercept)


def _read_neighborhood(cfg):
    pts = _read_points(cfg.points)
    w = None
    if cfg.weights is not None:
        w = read_matrix(cfg.weights, "points", "covariates").ravel()
    return Neighborhood(pts, pts.mean(axis=0), np.ones(pts.shape[0]) if w is None else w)


def _penalty(cfg):
    lams = None if cfg.lambdas is None else tuple(cfg.lambdas)
    return PenaltyConfig(cfg.penalty, lams, cfg.n_lambdas, cfg.lambda_min_ratio, cfg.mcp_gamma,
                         cfg.l1_ratio, cfg.p)


def _report(m, q, cfg, intercept=None, weights=None):
    null = null_ensemble(m, cfg.null, weights, intercept)
    return diagnostics(m, q, null, cfg.p, cfg.solver).to_dict()


def cmd_wasserstein(cfg):
    _need(cfg, "mu", "nu")
    mu, nu = _read_ensemble(cfg.mu), _read_ensemble(cfg.nu)
    plan = ensemble_plan(mu, nu, cfg.p, cfg.solver, cfg.ground)
    rows, cols = plan.marginal_residuals()
    return [{"record": "distance", "distance": max(plan.objective, 0.0) ** (1.0 / cfg.p),
             "objective": plan.objective, "solver": plan.solver, "p": cfg.p,
             "ground": cfg.ground, "row_marginal_residual": rows,
             "column_marginal_residual": cols}]


def cmd_fit_a(cfg):
    _need(cfg, "points", "mu")
    nb = _read_neighborhood(cfg)
    mu = _read_ensemble(cfg.mu)
    path = fit_slim_a(mu, nb, _penalty(cfg), cfg.fit_intercept, cfg.standardize)
    records = []
    for i, e in enumerate(path):
        nu = e.coef.predict(nb.points)
        icpt = e.coef.intercept
        records.append({"record": "path-entry", "index": i, "lambda": e.lam,
                        "active": list(e.coef.active_groups), "w2_distance": e.w2_distance,
                        "w2_r2": e.w2_r2, "objective": e.objective,
                        "kkt": None if e.kkt is None else list(e.kkt),
                        "n_iter": e.coef.n_iter, "converged": e.coef.converged,
                        "beta": e.coef.beta, "intercept": icpt,
                        "diagnostics": _report(mu, nu, cfg, None, nb.weights)})
    return records


def cmd_fit_p(cfg):
    _need(cfg, "points", "theta", "mu")
    nb = _read_neighborhood(cfg)
    draws = _read_draws(cfg)
    mu = _read_ensemble(cfg.mu)
    res = quadratic_slim_p(nb, draws, mu, cfg.mode, cfg.budget, cfg.lambdas, cfg.penalty,
                           cfg.mcp_gamma, cfg.box, cfg.solver)
    records = []
    for e in res:
        nu = e.coef.predict(nb.points)
        records.append({"record": "mask", "budget": e.budget, "lambda": e.lam,
                        "alpha": e.mask.alpha, "active": list(e.mask.active),
                        "w2_distance": e.w2_distance, "n_iter": e.n_iter,
                        "converged": e.converged, "history": e.history,
                        "diagnostics": _report(mu, nu, cfg, draws.intercept, nb.weights)})
    return records


def cmd_search(cfg):
    _need(cfg, "points", "theta", "mu")
    nb = _read_neighborhood(cfg)
    draws = _read_draws(cfg)
    mu = _read_ensemble(cfg.mu)
    k = draws.n_features
    if cfg.method == "best-subsets":
        entries = list(best_subsets(nb, draws, mu, cfg.rule, cfg.p, cfg.solver,
                                    threads=cfg.threads))
    elif cfg.method == "stepwise":
        entries = list(backward_stepwise(nb, draws, mu, cfg.rule, cfg.p, cfg.solver,
                                         cfg.threads))
    elif cfg.method == "annealing":
        sizes = cfg.budget or ([cfg.target_size] if cfg.target_size else list(range(1, k)))
        entries = [simulated_annealing(nb, draws, mu, j, cfg.rule, None, cfg.seed, cfg.restarts,
                                       cfg.p, cfg.solver) for j in sizes]
    else:
        raise ConfigError(f"unknown search method {cfg.method!r}")
    records = []
    for e in entries:
        nu = e.coef.predict(nb.points)
        records.append({"record": "size", "size": e.size, "active": list(e.active),
                        "distance": e.distance, "method": e.method, "rule": cfg.rule,
                        "beta": e.coef.beta, "intercept": e.coef.intercept,
                        "diagnostics": _report(mu, nu, cfg, e.coef.intercept, nb.weights)})
    return records


def cmd_metrics(cfg):
    _need(cfg, "mu", "nu")
    m, q = _read_ensemble(cfg.mu), _read_ensemble(cfg.nu)
    intercept = None
    if cfg.intercept is not None:
        intercept = read_matrix(cfg.intercept, "coefficients", "draws").ravel()
    return [dict({"record": "diagnostics", "null": cfg.null}, **_report(m, q, cfg, intercept))]


def _replicate(args):
    cfg, r = args
    seed = [cfg.seed, r]
    if cfg.scenario == "toy":
        out = run_toy(cfg.rho, seed, cfg.n, cfg.n_draws, cfg.solver)
    elif cfg.scenario == "gaussian":
        pen = PenaltyConfig(cfg.penalty, None, cfg.n_lambdas, cfg.lambda_min_ratio,
                            cfg.mcp_gamma, cfg.l1_ratio, cfg.p)
        out = run_gaussian(cfg.rho, seed, cfg.n, cfg.k or 20, cfg.n_draws, cfg.p, pen,
                           cfg.slim_p, cfg.budget)
    else:
        raise ConfigError(f"unknown scenario {cfg.scenario!r}; choose toy or gaussian")
    out["replicate"] = r
    return out


def cmd_simulate(cfg):
    if cfg.replicates < 1:
        raise ConfigError("replicates must be at least 1")
    jobs = [(cfg, r) for r in range(cfg.replicates)]
    if cfg.threads > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            results = list(pool.map(_replicate, jobs))
    else:
        results = [_replicate(j) for j in jobs]
    records = [dict({"record": "replicate"}, **res) for res in results]
    for row in average_rows(results):
        records.append(dict({"record": "summary", "scenario": cfg.scenario, "rho": cfg.rho}, **row))
    return records


def cmd_neighborhood(cfg):
    _need(cfg, "center")
    center = read_matrix(cfg.center, "points", "covariates").ravel()
    if cfg.construction == "gaussian":
        _need(cfg, "data")
        X = _read_points(cfg.data)
        nb = gaussian_neighborhood(center, empirical_covariance(X, cfg.centered),
                                   cfg.sample_size or X.shape[0], cfg.size, cfg.seed)
        scale = empirical_covariance(X, cfg.centered) / (cfg.sample_size or X.shape[0])
    elif cfg.construction == "knn":
        _need(cfg, "data", "size")
        X = _read_points(cfg.data)
        nb = knn_neighborhood(center, X, cfg.size)
        scale = empirical_covariance(X, cfg.centered) / X.shape[0]
    else:
        raise ConfigError(f"unknown neighborhood construction {cfg.construction!r}")
    if cfg.kernel == "uniform":
        w = nb.weights
    else:
        w = kernel_weights(KernelSpec(cfg.kernel, scale), center, nb.points)
    out = Path(cfg.out)
    write_matrix(out / "points.csv", nb.points, "points", "covariates")
    write_matrix(out / "weights.csv", w, "points", "covariates")
    return [{"record": "neighborhood", "construction": nb.construction, "size": nb.size,
             "psd_clipped": nb.psd_clipped, "points_file": "points.csv",
             "weights_file": "weights.csv"}]


HANDLERS = {"wasserstein": cmd_wasserstein, "fit-a": cmd_fit_a, "fit-p": cmd_fit_p,
            "search": cmd_search, "metrics": cmd_metrics, "simulate": cmd_simulate,
            "neighborhood": cmd_neighborhood}


def run(command, cfg):
    """Execute a command and write its bundle; returns the list of records written."""
    records = [provenance(command, cfg)] + HANDLERS[command](cfg)
    write_jsonl(Path(cfg.out) / "results.jsonl", records)
    return records


def build_parser():
    parser = argparse.ArgumentParser(prog="wslim", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"wslim {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", metavar="PATH")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--p", type=float)
        sp.add_argument("--solver", choices=("exact", "hilbert", "rank1d", "auto"))
        sp.add_argument("--penalty", choices=("group-lasso", "group-mcp"))
        sp.add_argument("--mcp-gamma", dest="mcp_gamma", type=float)
        sp.add_argument("--budget", type=int, nargs="+")
        sp.add_argument("--null", choices=("intercept", "zero", "mean"))
        sp.add_argument("--out", metavar="DIR")
        sp.add_argument("--threads", type=int)
        for path_arg in ("mu", "nu", "points", "theta", "intercept", "weights", "center", "data"):
            sp.add_argument(f"--{path_arg}", metavar="PATH")
        if name == "search":
            sp.add_argument("--method", choices=("best-subsets", "annealing", "stepwise"))
            sp.add_argument("--rule", choices=("fixed", "adaptive"))
            sp.add_argument("--target-size", dest="target_size", type=int)
            sp.add_argument("--restarts", type=int)
        if name == "fit-p":
            sp.add_argument("--mode", choices=("exact", "relaxed"))
        if name == "simulate":
            sp.add_argument("--scenario", choices=("toy", "gaussian"))
            sp.add_argument("--rho", type=float)
            sp.add_argument("--replicates", type=int)
        if name == "neighborhood":
            sp.add_argument("--construction", choices=("gaussian", "knn"))
            sp.add_argument("--size", type=int)
            sp.add_argument("--kernel", choices=("uniform", "gaussian-mahalanobis"))
    return parser


def main(argv=None):
    args = vars(build_parser().parse_args(argv))
    command = args.pop("command")
    config_path = args.pop("config")
    try:
        cfg = load_config(config_path, args)
        records = run(command, cfg)
    except ConfigError as exc:
        print(f"wslim: config error: {exc}", file=sys.stderr)
        return 2
    except (MatrixParseError, ValueError, OSError) as exc:
        print(f"wslim: error: {exc}", file=sys.stderr)
        return 1
    for rec in records[1:]:
        if rec.get("record") in ("distance", "diagnostics", "neighborhood"):
            print(dumps(rec))
    return 0

