"""Extremum estimation: grid search, Nelder-Mead, a genetic algorithm and SPSA.

All optimizers minimise a callable ``loss(theta_array) -> float`` over a
:class:`~simcal.space.ParameterSpace`.  Bounds and discrete sets are enforced
by projection; general constraints enter the objective as a quadratic
exterior penalty.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace
from types import MappingProxyType
from typing import Callable, Mapping, Sequence

import numpy as np

from .core import Dataset, SeedStream, as_seed_stream, parallel_map
from .cost import LossSpec, eval_loss
from .model import Model
from .space import ParameterSpace, ParameterVector

PENALTY_COEF = 1e3
FAMILIES = ("grid", "nelder_mead", "genetic", "spsa")

DEFAULT_HYPER: dict[str, dict] = {
    "grid": {"resolution": 11},
    "nelder_mead": {"reflection": 1.0, "expansion": 2.0, "contraction": 0.5, "shrink": 0.5,
                    "initial_scale": 0.1, "max_iter": 10_000, "xtol": 1e-8},
    "genetic": {"population": 40, "generations": 100, "crossover_rate": 0.9, "mutation_rate": 0.2,
                "mutation_scale": 0.05, "tournament": 3, "elitism": 2},
    "spsa": {"a": 0.5, "A": None, "alpha": 0.602, "c": 0.05, "gamma": 0.101, "iterations": 500},
}


class OptimizerError(ValueError):
    pass


@dataclass(frozen=True)
class OptimizerConfig:
    """Optimizer family, its hyperparameters, seed and evaluation budget.

    Unspecified hyperparameters take the family defaults in ``DEFAULT_HYPER``.
    For SPSA, ``A=None`` means 10% of the iteration count.
    """

    family: str
    hyper: Mapping[str, object] = field(default_factory=dict)
    seed: SeedStream = SeedStream(0)
    budget: int = 10_000

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise OptimizerError(f"unknown optimizer family {self.family!r}; choose from {list(FAMILIES)}")
        defaults = DEFAULT_HYPER[self.family]
        unknown = set(self.hyper) - set(defaults)
        if unknown:
            raise OptimizerError(f"unknown {self.family} hyperparameters: {sorted(unknown)}")
        merged = {**defaults, **self.hyper}
        if self.family == "spsa" and merged["A"] is None:
            merged["A"] = 0.1 * merged["iterations"]
        object.__setattr__(self, "hyper", MappingProxyType(merged))
        object.__setattr__(self, "seed", as_seed_stream(self.seed))
        if int(self.budget) < 1:
            raise OptimizerError("budget must be >= 1")
        self._validate(merged)

    def _validate(self, h):
        if self.family == "genetic":
            for k in ("crossover_rate", "mutation_rate"):
                if not 0 <= h[k] <= 1:
                    raise OptimizerError(f"{k} must lie in [0, 1]")
            if h["population"] < 2 or h["tournament"] < 1 or not 0 <= h["elitism"] <= h["population"]:
                raise OptimizerError("need population >= 2, tournament >= 1, 0 <= elitism <= population")
            if h["mutation_scale"] < 0 or h["generations"] < 0:
                raise OptimizerError("mutation_scale and generations must be non-negative")
        elif self.family == "spsa":
            for k in ("a", "alpha", "c", "gamma"):
                if not h[k] > 0:
                    raise OptimizerError(f"SPSA gain constant {k} must be positive, got {h[k]}")
            if h["A"] < 0 or h["iterations"] < 1:
                raise OptimizerError("SPSA needs A >= 0 and iterations >= 1")
        elif self.family == "nelder_mead":
            h_ok = (h["reflection"] > 0 and h["expansion"] > 1 and 0 < h["contraction"] < 1
                    and 0 < h["shrink"] < 1 and h["initial_scale"] > 0 and h["xtol"] >= 0)
            if not h_ok:
                raise OptimizerError("invalid Nelder-Mead coefficients")
        elif self.family == "grid":
            res = h["resolution"]
            if any(r < 2 for r in np.atleast_1d(res)):
                raise OptimizerError("grid resolution must be >= 2 per dimension")


@dataclass(frozen=True)
class CalibrationResult:
    theta_hat: ParameterVector
    loss_hat: float
    evaluations: int
    trace: tuple[tuple[int, float], ...]
    converged: bool
    reason: str
    seed_used: SeedStream
    constraint_residuals: Mapping[str, float] = field(default_factory=dict)


class _BudgetExhausted(Exception):
    pass


class _Objective:
    """Counts evaluations, adds the constraint penalty and tracks the incumbent."""

    def __init__(self, loss: Callable[[np.ndarray], float], space: ParameterSpace, budget: int):
        self.loss = loss
        self.space = space
        self.budget = int(budget)
        self.n = 0
        self.best_x: np.ndarray | None = None
        self.best_f = math.inf
        self.trace: list[tuple[int, float]] = []

    def __call__(self, x: np.ndarray) -> float:
        if self.n >= self.budget:
            raise _BudgetExhausted
        x = np.array(x, dtype=float)
        f = float(self.loss(x))
        if self.space.constraints:
            f += PENALTY_COEF * sum(r * r for r in self.space.constraint_residuals(x).values())
        self.n += 1
        if f < self.best_f:
            self.best_f, self.best_x = f, x.copy()
        self.trace.append((self.n, self.best_f))
        return f if math.isfinite(f) else math.inf

    def result(self, converged: bool, reason: str, seed: SeedStream) -> CalibrationResult:
        if self.best_x is None:
            raise OptimizerError("no finite loss value was evaluated within the budget")
        return CalibrationResult(
            theta_hat=self.space.vector(self.best_x),
            loss_hat=self.best_f,
            evaluations=self.n,
            trace=tuple(self.trace),
            converged=converged,
            reason=reason,
            seed_used=seed,
            constraint_residuals=MappingProxyType(self.space.constraint_residuals(self.best_x)),
        )


def project_feasible(theta, space: ParameterSpace) -> np.ndarray:
    """Clip continuous components to their bounds and snap discrete ones
    to the nearest admissible value (ties go to the smaller value)."""
    x = np.array(space.as_array(theta), dtype=float)
    nc = space.n_continuous
    x[:nc] = np.clip(x[:nc], space.lower[:nc], space.upper[:nc])
    for k, (_, vals) in enumerate(space.discrete):
        arr = np.asarray(vals)
        x[nc + k] = arr[np.argmin(np.abs(arr - x[nc + k]))]
    return x


def _require_continuous(space: ParameterSpace, family: str):
    if space.discrete:
        raise OptimizerError(f"{family} handles continuous parameters only; "
                             f"discrete: {[d[0] for d in space.discrete]}")


def grid_axes(space: ParameterSpace, resolution) -> list[np.ndarray]:
    res = np.broadcast_to(np.atleast_1d(resolution), (space.n_continuous,)) if space.n_continuous else []
    axes = [np.linspace(lo, hi, int(r)) for (_, lo, hi), r in zip(space.continuous, res)]
    axes += [np.array(vals) for _, vals in space.discrete]
    return axes


def grid_search(loss, space: ParameterSpace, config: OptimizerConfig) -> CalibrationResult:
    """Exhaustive search over the Cartesian grid, visited in lexicographic order."""
    axes = grid_axes(space, config.hyper["resolution"])
    total = math.prod(len(a) for a in axes)
    if total > config.budget:
        raise OptimizerError(f"grid of {total} points exceeds the budget of {config.budget} evaluations")
    obj = _Objective(loss, space, config.budget)
    for point in itertools.product(*axes):
        obj(np.array(point))
    return obj.result(True, "grid exhausted", config.seed)


def nelder_mead(loss, space: ParameterSpace, config: OptimizerConfig, init=None) -> CalibrationResult:
    """Nelder-Mead simplex search with every candidate projected into the box.

    Stops when every vertex lies within ``xtol`` (max-norm) of the best one,
    after ``max_iter`` iterations, or when the budget runs out.
    """
    _require_continuous(space, "nelder_mead")
    h = config.hyper
    rho, chi, psi, sigma = h["reflection"], h["expansion"], h["contraction"], h["shrink"]
    obj = _Objective(loss, space, config.budget)
    proj = lambda z: project_feasible(z, space)  # noqa: E731
    x0 = proj(space.midpoint if init is None else space.as_array(init))
    n = x0.size
    lo, hi = space.lower, space.upper
    simplex = [x0]
    for j in range(n):
        step = h["initial_scale"] * (hi[j] - lo[j])
        v = x0.copy()
        v[j] = x0[j] + step if x0[j] + step <= hi[j] else x0[j] - step
        simplex.append(v)
    sim = np.array(simplex)
    try:
        fs = np.array([obj(v) for v in sim])
        for _ in range(int(h["max_iter"])):
            order = np.argsort(fs, kind="stable")
            sim, fs = sim[order], fs[order]
            if np.max(np.abs(sim[1:] - sim[0])) <= h["xtol"]:
                return obj.result(True, "simplex diameter below tolerance", config.seed)
            centroid = sim[:-1].mean(axis=0)
            xr = proj(centroid + rho * (centroid - sim[-1]))
            fr = obj(xr)
            if fr < fs[0]:
                xe = proj(centroid + chi * (xr - centroid))
                fe = obj(xe)
                sim[-1], fs[-1] = (xe, fe) if fe < fr else (xr, fr)
                continue
            if fr < fs[-2]:
                sim[-1], fs[-1] = xr, fr
                continue
            if fr < fs[-1]:
                xc = proj(centroid + psi * (xr - centroid))
                fc = obj(xc)
                if fc <= fr:
                    sim[-1], fs[-1] = xc, fc
                    continue
            else:
                xcc = proj(centroid - psi * (centroid - sim[-1]))
                fcc = obj(xcc)
                if fcc < fs[-1]:
                    sim[-1], fs[-1] = xcc, fcc
                    continue
            for i in range(1, n + 1):
                sim[i] = proj(sim[0] + sigma * (sim[i] - sim[0]))
                fs[i] = obj(sim[i])
        return obj.result(False, "maximum iterations reached", config.seed)
    except _BudgetExhausted:
        return obj.result(False, "budget exhausted", config.seed)


def genetic_algorithm(loss, space: ParameterSpace, config: OptimizerConfig) -> CalibrationResult:
    """Generational GA with tournament selection, uniform crossover, Gaussian
    mutation (resampling for discrete genes) and elitism."""
    h = config.hyper
    pop_size, k_tour, n_elite = int(h["population"]), int(h["tournament"]), int(h["elitism"])
    rng = config.seed.rng()
    obj = _Objective(loss, space, config.budget)
    nc = space.n_continuous
    scale = h["mutation_scale"] * space.width[:nc]
    pop = np.array([space.sample_uniform(rng) for _ in range(pop_size)])
    fit = np.full(pop_size, math.inf)

    def tournament() -> int:
        idx = rng.integers(0, pop_size, size=k_tour)
        return int(min(idx, key=lambda i: (fit[i], i)))

    try:
        for i in range(pop_size):
            fit[i] = obj(pop[i])
        for _ in range(int(h["generations"])):
            elite = np.argsort(fit, kind="stable")[:n_elite]
            new_pop = [pop[i].copy() for i in elite]
            new_fit = [fit[i] for i in elite]
            children = []
            while len(new_pop) + len(children) < pop_size:
                p1, p2 = pop[tournament()], pop[tournament()]
                if rng.random() < h["crossover_rate"]:
                    child = np.where(rng.random(space.dim) < 0.5, p1, p2)
                else:
                    child = p1.copy()
                mutate = rng.random(space.dim) < h["mutation_rate"]
                for j in np.flatnonzero(mutate):
                    if j < nc:
                        child[j] += rng.normal(0.0, scale[j])
                    else:
                        vals = space.discrete[j - nc][1]
                        child[j] = vals[rng.integers(len(vals))]
                children.append(project_feasible(child, space))
            for child in children:
                new_fit.append(obj(child))
                new_pop.append(child)
            pop, fit = np.array(new_pop), np.array(new_fit)
        return obj.result(True, "generations completed", config.seed)
    except _BudgetExhausted:
        return obj.result(False, "budget exhausted", config.seed)


def spsa_gradient(loss, theta, c: float, rng: np.random.Generator, space: ParameterSpace | None = None):
    """One simultaneous-perturbation gradient estimate.

    Returns ``(gradient, delta, loss_plus, loss_minus)``.  When ``space`` is
    given the two perturbed points are projected into it.
    """
    theta = np.asarray(theta, dtype=float)
    delta = rng.choice(np.array([-1.0, 1.0]), size=theta.size)
    plus, minus = theta + c * delta, theta - c * delta
    if space is not None:
        plus, minus = project_feasible(plus, space), project_feasible(minus, space)
    fp, fm = float(loss(plus)), float(loss(minus))
    return (fp - fm) / (2.0 * c * delta), delta, fp, fm


def spsa(loss, space: ParameterSpace, config: OptimizerConfig, init=None) -> CalibrationResult:
    """SPSA with gains ``a/(k+1+A)**alpha`` and ``c/(k+1)**gamma``.

    Each iterate is evaluated, and the best evaluated point is returned.
    A non-finite loss at a perturbation halves ``c_k`` once before giving up.
    """
    _require_continuous(space, "spsa")
    h = config.hyper
    rng = config.seed.rng()
    obj = _Objective(loss, space, config.budget)
    theta = project_feasible(space.midpoint if init is None else space.as_array(init), space)
    try:
        obj(theta)
        for k in range(int(h["iterations"])):
            ak = h["a"] / (k + 1 + h["A"]) ** h["alpha"]
            ck = h["c"] / (k + 1) ** h["gamma"]
            g, _, fp, fm = spsa_gradient(obj, theta, ck, rng, space)
            if not (math.isfinite(fp) and math.isfinite(fm)):
                g, _, fp, fm = spsa_gradient(obj, theta, ck / 2.0, rng, space)
                if not (math.isfinite(fp) and math.isfinite(fm)):
                    raise OptimizerError(f"SPSA iteration {k}: non-finite loss at both perturbation "
                                         f"sizes around {theta.tolist()}")
            theta = project_feasible(theta - ak * g, space)
            obj(theta)
        return obj.result(True, "iterations completed", config.seed)
    except _BudgetExhausted:
        return obj.result(False, "budget exhausted", config.seed)


def run_optimizer(loss, space: ParameterSpace, config: OptimizerConfig, init=None) -> CalibrationResult:
    if config.family == "grid":
        return grid_search(loss, space, config)
    if config.family == "nelder_mead":
        return nelder_mead(loss, space, config, init)
    if config.family == "genetic":
        return genetic_algorithm(loss, space, config)
    return spsa(loss, space, config, init)


@dataclass(frozen=True)
class MultiStartReport:
    losses: tuple[float, ...]
    thetas: np.ndarray
    theta_sd: np.ndarray
    failures: tuple[tuple[int, str], ...] = ()


def multi_start(inner: OptimizerConfig, loss, space: ParameterSpace, starts: int,
                seed: SeedStream, init=None, n_jobs: int = 1) -> tuple[CalibrationResult, MultiStartReport]:
    """Run ``inner`` from ``starts`` seeded starting points and keep the best.

    Start ``s`` begins at a uniform draw from ``seed/start:s`` (or at ``init``
    for ``s=0`` when given) and runs with optimizer seed ``seed/opt:s``.  The
    spread of the per-start estimates is the Monte Carlo error diagnostic.
    """
    if starts < 1:
        raise OptimizerError("starts must be >= 1")

    def one(s: int):
        x0 = space.as_array(init) if (init is not None and s == 0) else space.sample_uniform(
            seed.derive("start", s).rng())
        cfg = replace(inner, seed=seed.derive("opt", s))
        try:
            return run_optimizer(loss, space, cfg, x0)
        except Exception as exc:  # recorded per start, fatal only if all fail
            return exc

    results = parallel_map(one, range(starts), n_jobs)
    ok = [(s, r) for s, r in enumerate(results) if isinstance(r, CalibrationResult)]
    failures = tuple((s, f"{type(r).__name__}: {r}") for s, r in enumerate(results)
                     if not isinstance(r, CalibrationResult))
    if not ok:
        raise OptimizerError(f"all {starts} starts failed; first: {failures[0][1]}")
    best = min(ok, key=lambda sr: (sr[1].loss_hat, sr[0]))[1]
    thetas = np.array([r.theta_hat.values for _, r in ok])
    report = MultiStartReport(tuple(r.loss_hat for _, r in ok), thetas, thetas.std(axis=0), failures)
    return best, report


def make_objective(model: Model, spec: LossSpec, ds: Dataset, seed: SeedStream) -> Callable[[np.ndarray], float]:
    """Loss as a function of the calibrated parameters only.

    The simulator seed is fixed across evaluations (common random numbers).
    """

    def objective(x: np.ndarray) -> float:
        return eval_loss(spec, model, x, ds, seed)

    return objective


def calibrate(model: Model, spec: LossSpec, ds: Dataset, config: OptimizerConfig, init=None,
              starts: int = 1, seed: SeedStream | int | None = None,
              n_jobs: int = 1) -> tuple[CalibrationResult, MultiStartReport]:
    """Fit ``model`` to ``ds``: minimise the loss with ``config`` from ``starts`` starts.

    ``seed`` feeds the simulator (``seed/sim``) and the optimizer
    (``seed/optimizer``); it defaults to the config's seed.
    """
    seed = config.seed if seed is None else as_seed_stream(seed)
    objective = make_objective(model, spec, ds, seed.derive("sim"))
    return multi_start(config, objective, model.space, starts, seed.derive("optimizer"), init, n_jobs)


def initial_guess(space: ParameterSpace, values: Mapping[str, float] | Sequence[float] | None):
    if values is None:
        return None
    return space.as_array(values)
