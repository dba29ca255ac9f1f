"""Synthetic-data benchmarking: data synthesis, parameter recovery, estimator
MSE, error decomposition, sensitivity sweeps, loss landscapes and model
comparison."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .core import Channel, DataPoint, Dataset, Schema, SeedStream, as_seed_stream, parallel_map
from .cost import LossSpec, eval_loss
from .model import Model, model_predict
from .optimize import CalibrationResult, MultiStartReport, OptimizerConfig, calibrate

Scenario = Callable[[np.random.Generator, int], Mapping[str, np.ndarray]]


@dataclass(frozen=True)
class SyntheticDGP:
    """A model run at known parameters acts as the data-collection process.

    ``scenario(rng, i)`` returns the input record of point ``i``.  Observation
    noise comes from the model's noise specification at ``theta_true``.
    """

    model: Model
    theta_true: Mapping[str, float]
    scenario: Scenario
    name: str = "synthetic"

    def __post_init__(self):
        object.__setattr__(self, "theta_true", dict(self.model.space.vector(self.theta_true).as_dict()))
        self.model.space.check(self.theta_true)

    @property
    def theta_array(self) -> np.ndarray:
        return self.model.space.as_array(self.theta_true)


def synthesize(dgp: SyntheticDGP, n: int, seed: SeedStream | int = 0) -> Dataset:
    """``n`` points: inputs from ``seed/scenario:i``, outputs from ``seed/obs:i``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    seed = as_seed_stream(seed)
    outputs = dgp.model.simulator.outputs
    points = []
    for i in range(n):
        x = {k: np.atleast_1d(np.asarray(v, float)) for k, v in dgp.scenario(seed.derive("scenario", i).rng(), i).items()}
        rec = model_predict(dgp.model, x, dgp.theta_array, 1, seed.derive("obs", i))[0]
        points.append(DataPoint(x, {k: rec[k] for k in outputs if k in rec}))
    first = points[0]
    schema = Schema(tuple(Channel(k, None) for k in first.x_obs), tuple(Channel(k, None) for k in first.y_obs))
    truth = ", ".join(f"{k}={v:.6g}" for k, v in dgp.theta_true.items())
    return Dataset(schema, tuple(points), f"{dgp.name}: theta_true=({truth}), seed={seed}")


@dataclass(frozen=True)
class Pipeline:
    """A calibration recipe: loss, optimizer, number of starts and initial point."""

    spec: LossSpec
    config: OptimizerConfig
    starts: int = 1
    init: Mapping[str, float] | None = None
    n_jobs: int = 1

    def fit(self, model: Model, ds: Dataset, seed: SeedStream) -> tuple[CalibrationResult, MultiStartReport]:
        init = None if self.init is None else model.space.as_array(self.init)
        return calibrate(model, self.spec, ds, self.config, init, self.starts, seed, self.n_jobs)

    def estimator(self, model: Model) -> Callable[[Dataset, SeedStream], np.ndarray]:
        def estimate(ds: Dataset, seed: SeedStream) -> np.ndarray:
            return np.array(self.fit(model, ds, seed)[0].theta_hat.values)
        return estimate


@dataclass(frozen=True)
class RecoveryReport:
    names: tuple[str, ...]
    theta_true: np.ndarray
    theta_hat: np.ndarray
    loss_hat: float
    noise_floor: float
    evaluations: int
    wall_time: float = field(compare=False)

    @property
    def abs_error(self) -> np.ndarray:
        return np.abs(self.theta_hat - self.theta_true)

    @property
    def rel_error(self) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(self.theta_true != 0, self.abs_error / np.abs(self.theta_true), np.inf)

    def as_dict(self) -> dict:
        """Everything except the wall time, which is not reproducible."""
        comps = {n: {"true": float(t), "estimate": float(h), "abs_error": float(a)}
                 for n, t, h, a in zip(self.names, self.theta_true, self.theta_hat, self.abs_error)}
        return {"components": comps, "loss_hat": self.loss_hat, "noise_floor": self.noise_floor,
                "evaluations": self.evaluations}


def recover(dgp: SyntheticDGP, n: int, pipeline: Pipeline, seed: SeedStream | int = 0) -> RecoveryReport:
    """Synthesize ``n`` points from ``seed/data`` and calibrate with ``seed/calibrate``.

    ``noise_floor`` is the loss at the true parameters under the same
    simulator seed the calibration uses.
    """
    seed = as_seed_stream(seed)
    ds = synthesize(dgp, n, seed.derive("data"))
    start = time.perf_counter()
    fit_seed = seed.derive("calibrate")
    best, _ = pipeline.fit(dgp.model, ds, fit_seed)
    wall = time.perf_counter() - start
    floor = eval_loss(pipeline.spec, dgp.model, dgp.theta_array, ds, fit_seed.derive("sim"))
    return RecoveryReport(dgp.model.space.names, dgp.theta_array, np.array(best.theta_hat.values),
                          best.loss_hat, floor, best.evaluations, wall)


@dataclass(frozen=True)
class MSEReport:
    """Empirical bias, variance (1/n) and MSE of an estimator, per component."""

    names: tuple[str, ...]
    bias: np.ndarray
    variance: np.ndarray
    mse: np.ndarray
    replications: int
    estimates: np.ndarray = field(repr=False)
    failures: tuple[tuple[int, str], ...] = ()

    @property
    def identity_gap(self) -> np.ndarray:
        return np.abs(self.mse - (self.bias ** 2 + self.variance))

    def as_dict(self) -> dict:
        comps = {n: {"bias": float(b), "variance": float(v), "mse": float(m)}
                 for n, b, v, m in zip(self.names, self.bias, self.variance, self.mse)}
        return {"components": comps, "replications": self.replications,
                "failures": [{"repetition": r, "error": e} for r, e in self.failures]}


def mse_report(estimates, theta_true, names: Sequence[str], failures=()) -> MSEReport:
    est = np.atleast_2d(np.asarray(estimates, dtype=float))
    truth = np.asarray(theta_true, dtype=float)
    centre = est.mean(axis=0)
    bias = centre - truth
    variance = np.mean((est - centre) ** 2, axis=0)
    mse = np.mean((est - truth) ** 2, axis=0)
    return MSEReport(tuple(names), bias, variance, mse, est.shape[0], est, tuple(failures))


def _draw_estimates(fn, items, n_jobs):
    def safe(item):
        try:
            return fn(item)
        except Exception as exc:  # recorded per repetition
            return exc
    results = parallel_map(safe, items, n_jobs)
    ok = [np.asarray(r, float) for r in results if not isinstance(r, Exception)]
    failed = tuple((i, f"{type(r).__name__}: {r}") for i, r in zip(items, results) if isinstance(r, Exception))
    return ok, failed


def estimator_mse(dgp: SyntheticDGP, n: int, estimator: Callable[[Dataset, SeedStream], np.ndarray], m: int,
                  seed: SeedStream | int = 0, n_jobs: int = 1) -> MSEReport:
    """Bias/variance/MSE of ``estimator`` over ``m`` synthetic datasets.

    Repetition ``r`` uses data seed ``seed/data:r`` and estimator seed
    ``seed/estimator:r``.  Failed repetitions are recorded and skipped.
    """
    if m < 2:
        raise ValueError("need at least two repetitions")
    seed = as_seed_stream(seed)

    def one(r):
        return estimator(synthesize(dgp, n, seed.derive("data", r)), seed.derive("estimator", r))

    ok, failed = _draw_estimates(one, range(m), n_jobs)
    if len(ok) < 2:
        raise RuntimeError(f"only {len(ok)} of {m} repetitions succeeded; first failure: "
                           f"{failed[0][1] if failed else 'none'}")
    return mse_report(ok, dgp.theta_array, dgp.model.space.names, failed)


@dataclass(frozen=True)
class VarianceDecomposition:
    names: tuple[str, ...]
    standard_error: np.ndarray
    monte_carlo_error: np.ndarray

    @property
    def dominant(self) -> tuple[str, ...]:
        return tuple("standard" if s >= m else "monte_carlo"
                     for s, m in zip(self.standard_error, self.monte_carlo_error))

    def as_dict(self) -> dict:
        return {n: {"standard_error": float(s), "monte_carlo_error": float(m), "dominant": d}
                for n, s, m, d in zip(self.names, self.standard_error, self.monte_carlo_error, self.dominant)}


def variance_decomposition(dgp: SyntheticDGP, n: int, estimator: Callable[[Dataset, SeedStream], np.ndarray],
                           data_draws: int, optimizer_seeds: int, seed: SeedStream | int = 0,
                           n_jobs: int = 1) -> VarianceDecomposition:
    """Sampling variability versus Monte Carlo variability of an estimator (sd, 1/n).

    The standard error varies the dataset (``seed/data:r``) under one fixed
    estimator seed; the Monte Carlo error varies the estimator seed
    (``seed/estimator:s``) on the dataset ``seed/data:0``.
    """
    if data_draws < 2 or optimizer_seeds < 2:
        raise ValueError("need at least two data draws and two optimizer seeds")
    seed = as_seed_stream(seed)
    fixed_est = seed.derive("estimator", 0)
    by_data, f1 = _draw_estimates(lambda r: estimator(synthesize(dgp, n, seed.derive("data", r)), fixed_est),
                                  range(data_draws), n_jobs)
    base = synthesize(dgp, n, seed.derive("data", 0))
    by_seed, f2 = _draw_estimates(lambda s: estimator(base, seed.derive("estimator", s)),
                                  range(optimizer_seeds), n_jobs)
    if len(by_data) < 2 or len(by_seed) < 2:
        raise RuntimeError(f"too many failed repetitions: {(f1 + f2)[:1]}")
    return VarianceDecomposition(dgp.model.space.names, np.std(by_data, axis=0), np.std(by_seed, axis=0))


@dataclass(frozen=True)
class OATReport:
    ranking: tuple[tuple[str, float], ...]  # (name, output range), largest first
    channel: str
    levels: int

    def as_dict(self) -> dict:
        return {"channel": self.channel, "levels": self.levels,
                "ranking": [{"parameter": n, "range": r} for n, r in self.ranking]}


def oat_sensitivity(model: Model, x, levels: int, channel: str, seed: SeedStream | int = 0) -> OATReport:
    """One-at-a-time sweeps from the midpoint of the model's space.

    Continuous components take ``levels`` equispaced values; discrete ones
    their admissible sets.  The range of a vector output is the largest
    elementwise range.  Runs are noise-free and share one simulator seed.
    """
    if levels < 3:
        raise ValueError("need at least 3 levels per dimension")
    seed = as_seed_stream(seed)
    space = model.space
    base = space.midpoint
    ranges = []
    for j, name in enumerate(space.names):
        if j < space.n_continuous:
            sweep = np.linspace(space.continuous[j][1], space.continuous[j][2], levels)
        else:
            sweep = np.array(space.discrete[j - space.n_continuous][1])
        outs = []
        for v in sweep:
            theta = base.copy()
            theta[j] = v
            rec = model.simulate(x, theta, seed)
            if channel not in rec:
                raise ValueError(f"simulator output has no channel {channel!r}")
            outs.append(np.asarray(rec[channel], float).reshape(-1))
        stacked = np.vstack(outs)
        ranges.append(float(np.max(stacked.max(axis=0) - stacked.min(axis=0))))
    order = sorted(range(len(ranges)), key=lambda j: (-ranges[j], j))
    return OATReport(tuple((space.names[j], ranges[j]) for j in order), channel, levels)


@dataclass(frozen=True)
class Landscape:
    names: tuple[str, str]
    axis_0: np.ndarray
    axis_1: np.ndarray
    values: np.ndarray  # values[a, b] at (axis_0[a], axis_1[b])
    flat: bool
    near_min_fraction: float

    @property
    def minimum(self) -> float:
        return float(self.values.min())

    def argmin(self) -> tuple[float, float]:
        a, b = np.unravel_index(int(np.argmin(self.values)), self.values.shape)
        return float(self.axis_0[a]), float(self.axis_1[b])


FLAT_FRACTION = 0.05
NEAR_MIN_REL = 0.01
NEAR_MIN_ABS = 1e-12


def near_minimum_fraction(values) -> float:
    """Share of cells within 1% (relative, plus a 1e-12 absolute slack) of the minimum."""
    v = np.asarray(values, float)
    lo = float(v.min())
    return float(np.mean(v <= lo + NEAR_MIN_REL * abs(lo) + NEAR_MIN_ABS))


def loss_landscape(spec: LossSpec, model: Model, ds: Dataset, components: tuple[int | str, int | str],
                   resolution: int | tuple[int, int], seed: SeedStream | int = 0, reference=None,
                   n_jobs: int = 1) -> Landscape:
    """Loss on a 2-D grid over two continuous components, others held at ``reference``.

    ``reference`` defaults to the space midpoint.  The grid is flagged flat
    when at least 5% of its cells are within 1% of the smallest value.
    """
    seed = as_seed_stream(seed)
    space = model.space
    idx = [space.index(c) if isinstance(c, str) else int(c) for c in components]
    if len(idx) != 2 or idx[0] == idx[1] or any(not 0 <= i < space.n_continuous for i in idx):
        raise ValueError("need two distinct continuous components")
    res = (resolution, resolution) if np.isscalar(resolution) else tuple(resolution)
    if min(res) < 3:
        raise ValueError("resolution must be >= 3 per axis")
    ref = space.midpoint if reference is None else space.as_array(reference)
    axes = [np.linspace(space.continuous[i][1], space.continuous[i][2], r) for i, r in zip(idx, res)]

    def row(a):
        out = np.empty(res[1])
        for b, vb in enumerate(axes[1]):
            theta = ref.copy()
            theta[idx[0]], theta[idx[1]] = axes[0][a], vb
            out[b] = eval_loss(spec, model, theta, ds, seed)
        return out

    values = np.vstack(parallel_map(row, range(res[0]), n_jobs))
    frac = near_minimum_fraction(values)
    return Landscape((space.names[idx[0]], space.names[idx[1]]), axes[0], axes[1], values,
                     frac >= FLAT_FRACTION, frac)


@dataclass(frozen=True)
class EnsembleRow:
    name: str
    loss_hat: float | None
    theta_hat: Mapping[str, float] | None
    error: str | None = None


def ensemble_compare(candidates: Sequence[tuple[str, Model, Pipeline]], ds: Dataset,
                     seed: SeedStream | int = 0, n_jobs: int = 1) -> tuple[EnsembleRow, ...]:
    """Calibrate each candidate on ``ds`` and tabulate the smallest loss reached.

    All candidates get the same seed (common random numbers), so identical
    candidates give identical rows.  Failures are recorded per row.
    """
    seed = as_seed_stream(seed)
    names = [c[0] for c in candidates]
    schema_inputs = set(ds.schema.input_names)

    def one(c):
        name, model, pipe = c
        missing = set(model.simulator.inputs) - schema_inputs
        if missing:
            return EnsembleRow(name, None, None, f"dataset lacks inputs {sorted(missing)}")
        try:
            best, _ = pipe.fit(model, ds, seed)
        except Exception as exc:
            return EnsembleRow(name, None, None, f"{type(exc).__name__}: {exc}")
        return EnsembleRow(name, best.loss_hat, best.theta_hat.as_dict())

    if len(set(names)) != len(names):
        raise ValueError(f"candidate names must be unique: {names}")
    return tuple(parallel_map(one, list(candidates), n_jobs))


# -- scenario generators ----------------------------------------------------

def gipps_leader(duration: float = 120.0, tau: float = 0.66, v_mean: float = 12.0, amplitude: float = 4.0,
                 period: float = 40.0, gap: float = 70.0, v0: float | None = None,
                 phase: float | None = None) -> Scenario:
    """Sinusoidal leader speed profile with a seeded phase.

    The follower starts ``gap`` metres behind at the leader's initial speed
    unless ``v0`` is given.
    """
    steps = int(round(duration / tau)) + 1

    def make(rng: np.random.Generator, i: int) -> dict[str, np.ndarray]:
        ph = rng.uniform(0.0, 2.0 * math.pi) if phase is None else phase
        t = np.arange(steps) * tau
        v = np.maximum(v_mean + amplitude * np.sin(2.0 * math.pi * t / period + ph), 0.0)
        x = np.concatenate([[gap], gap + np.cumsum(0.5 * (v[1:] + v[:-1]) * tau)])
        return {"x_leader": x, "v_leader": v, "x0": np.array([0.0]),
                "v0": np.array([v[0] if v0 is None else v0])}

    return make


def uniform_flow(low: float = 0.0, high: float = 1500.0, name: str = "q_c") -> Scenario:
    """Scalar input drawn uniformly, e.g. conflicting flow in veh/h."""
    def make(rng: np.random.Generator, i: int) -> dict[str, np.ndarray]:
        return {name: np.array([rng.uniform(low, high)])}
    return make


def queue_demand(low: float = 0.05, high: float = 0.3, horizon: float = 3600.0) -> Scenario:
    def make(rng: np.random.Generator, i: int) -> dict[str, np.ndarray]:
        return {"arrival_rate": np.array([rng.uniform(low, high)]), "horizon": np.array([horizon])}
    return make


def gaussian_features(n_features: int) -> Scenario:
    def make(rng: np.random.Generator, i: int) -> dict[str, np.ndarray]:
        return {"x": rng.normal(size=n_features)}
    return make


SCENARIOS: dict[str, Callable[..., Scenario]] = {
    "gipps_leader": gipps_leader,
    "uniform_flow": uniform_flow,
    "queue_demand": queue_demand,
    "gaussian_features": gaussian_features,
}
