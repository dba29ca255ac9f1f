"""Desk-scale simulators: Gipps car following, Siegloch roundabout capacity,
an M/M/1 queue and a linear-in-parameters model.

Every simulator maps ``(input record, dynamic parameters, seed)`` to an
output record (a dict of float arrays).  Deterministic simulators ignore the
seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .core import SeedStream


class SimulationError(RuntimeError):
    pass


class CollisionError(SimulationError):
    def __init__(self, step: int, spacing: float):
        super().__init__(f"follower collided with leader at step {step} (spacing {spacing:.4g} m)")
        self.step = step
        self.spacing = spacing


@dataclass(frozen=True)
class GippsParams:
    """Gipps car-following parameters.

    Braking rates are stored positive and applied as decelerations.
    ``tau`` is the reaction time, which is also the simulation step.
    """

    V: float
    a: float
    b: float
    b_hat: float
    s: float
    tau: float

    def __post_init__(self):
        for name in ("V", "a", "b", "b_hat", "s", "tau"):
            if not getattr(self, name) > 0:
                raise ValueError(f"Gipps parameter {name} must be strictly positive, got {getattr(self, name)}")


@dataclass(frozen=True)
class GippsTrajectory:
    x: np.ndarray
    v: np.ndarray
    infeasible_braking: np.ndarray  # per step: braking radicand was negative and clamped


def simulate_gipps(x_leader, v_leader, x0: float, v0: float, mu: GippsParams) -> GippsTrajectory:
    """Follower response to a leader trajectory sampled every ``mu.tau`` seconds.

    The returned arrays have the leader's length; index 0 is the initial state.
    """
    xl = np.asarray(x_leader, dtype=float).reshape(-1)
    vl = np.asarray(v_leader, dtype=float).reshape(-1)
    if xl.size != vl.size or xl.size < 1:
        raise ValueError("leader displacement and speed must be non-empty and equally long")
    if not xl[0] - x0 > mu.s:
        raise ValueError(f"initial spacing {xl[0] - x0:g} m must exceed the effective size s={mu.s:g} m")
    V, a, b, bh, s, tau = mu.V, mu.a, mu.b, mu.b_hat, mu.s, mu.tau
    n = xl.size
    x = np.empty(n)
    v = np.empty(n)
    flags = np.zeros(n, dtype=bool)
    x[0], v[0] = float(x0), float(v0)
    xk, vk = float(x0), float(v0)
    bt = b * tau
    for k in range(n - 1):
        acc = vk + 2.5 * a * tau * (1.0 - vk / V) * math.sqrt(max(0.025 + vk / V, 0.0))
        rad = bt * bt + b * (2.0 * (xl[k] - s - xk) - vk * tau - vl[k] * vl[k] / bh)
        if rad < 0.0:
            flags[k + 1] = True
            rad = 0.0
        brk = -bt + math.sqrt(rad)
        vn = max(0.0, min(acc, brk))
        xk = xk + 0.5 * (vk + vn) * tau
        vk = vn
        x[k + 1], v[k + 1] = xk, vk
        spacing = xl[k + 1] - xk
        if spacing < 0.0:
            raise CollisionError(k + 1, spacing)
    return GippsTrajectory(x, v, flags)


@dataclass(frozen=True)
class RoundaboutParams:
    t_c: float  # critical gap (s)
    t_f: float  # follow-up headway (s)

    def __post_init__(self):
        if not self.t_c > self.t_f > 0:
            raise ValueError(f"need t_c > t_f > 0, got t_c={self.t_c}, t_f={self.t_f}")


def capacity_siegloch(q_c, params: RoundaboutParams):
    """Entry capacity (veh/h) against conflicting flow ``q_c`` (veh/h)."""
    q = np.asarray(q_c, dtype=float)
    if np.any(q < 0):
        raise ValueError("conflicting flow must be non-negative")
    cap = (3600.0 / params.t_f) * np.exp(-q * (params.t_c - params.t_f / 2.0) / 3600.0)
    return float(cap) if cap.ndim == 0 else cap


@dataclass(frozen=True)
class QueueResult:
    mean_delay: float | None  # mean wait before service (s); None when nobody was served
    served: int


def simulate_queue(arrival_rate: float, horizon: float, headway: float, seed: SeedStream) -> QueueResult:
    """Single-server FIFO queue with exponential inter-arrivals and service.

    Vehicles arriving in ``[0, horizon)`` are served to completion.  Events
    are processed in arrival order, which for a FIFO single server reduces
    the event list to the arrival/departure recursion below.
    """
    if not arrival_rate > 0 or not headway > 0:
        raise ValueError("arrival rate and mean service headway must be positive")
    if arrival_rate * headway >= 1:
        raise ValueError(f"unstable queue: utilisation {arrival_rate * headway:g} >= 1")
    if not horizon > 0:
        raise ValueError("horizon must be positive")
    rng = seed.rng()
    mean_gap = 1.0 / arrival_rate
    block = max(16, int(1.2 * horizon * arrival_rate) + 16)
    t = 0.0
    server_free = 0.0
    total_wait = 0.0
    served = 0
    while True:
        gaps = rng.exponential(mean_gap, block)
        services = rng.exponential(headway, block)
        for gap, service in zip(gaps.tolist(), services.tolist()):
            t += gap
            if t >= horizon:
                return QueueResult(total_wait / served if served else None, served)
            start = t if t > server_free else server_free
            total_wait += start - t
            server_free = start + service
            served += 1


class Simulator:
    """Base class: subclasses set the name/parameter/channel tuples and ``run``."""

    name = "simulator"
    params: tuple[str, ...] = ()
    inputs: tuple[str, ...] = ()
    outputs: tuple[str, ...] = ()
    stochastic = False

    def run(self, x: Mapping[str, np.ndarray], mu: Mapping[str, float],
            seed: SeedStream | None = None) -> dict[str, np.ndarray]:
        raise NotImplementedError

    def __call__(self, x, mu, seed=None):
        return self.run(x, mu, seed)

    def __repr__(self):
        return f"{type(self).__name__}()"

    def __eq__(self, other):
        return type(self) is type(other) and self.__dict__ == other.__dict__

    def __hash__(self):
        return hash(type(self))


class GippsSimulator(Simulator):
    name = "gipps"
    params = ("V", "a", "b", "b_hat", "s", "tau")
    inputs = ("x_leader", "v_leader", "x0", "v0")
    outputs = ("x", "v")

    def run(self, x, mu, seed=None):
        p = GippsParams(**{k: float(mu[k]) for k in self.params})
        traj = simulate_gipps(x["x_leader"], x["v_leader"], float(x["x0"][0]), float(x["v0"][0]), p)
        return {"x": traj.x, "v": traj.v, "infeasible_braking": traj.infeasible_braking.astype(float)}


class SieglochSimulator(Simulator):
    name = "siegloch"
    params = ("t_c", "t_f")
    inputs = ("q_c",)
    outputs = ("capacity",)

    def run(self, x, mu, seed=None):
        cap = capacity_siegloch(x["q_c"], RoundaboutParams(float(mu["t_c"]), float(mu["t_f"])))
        return {"capacity": np.atleast_1d(cap)}


class QueueSimulator(Simulator):
    """Queue wrapper; ``mean_delay`` is absent from the record when nobody is served."""

    name = "queue"
    params = ("headway",)
    inputs = ("arrival_rate", "horizon")
    outputs = ("mean_delay", "served")
    stochastic = True

    def run(self, x, mu, seed=None):
        if seed is None:
            raise SimulationError("the queue simulator is stochastic and needs a seed")
        res = simulate_queue(float(x["arrival_rate"][0]), float(x["horizon"][0]), float(mu["headway"]), seed)
        out = {"served": np.array([float(res.served)])}
        if res.mean_delay is not None:
            out["mean_delay"] = np.array([res.mean_delay])
        return out


class LinearSimulator(Simulator):
    """``y = x @ beta`` with ``n_features`` coefficients ``beta_0 .. beta_{p-1}``."""

    name = "linear"
    inputs = ("x",)
    outputs = ("y",)

    def __init__(self, n_features: int = 1):
        if n_features < 1:
            raise ValueError("n_features must be >= 1")
        self.n_features = int(n_features)
        self.params = tuple(f"beta_{j}" for j in range(self.n_features))

    def run(self, x, mu, seed=None):
        feats = np.asarray(x["x"], dtype=float)
        if feats.size != self.n_features:
            raise ValueError(f"expected {self.n_features} features, got {feats.size}")
        beta = np.array([mu[p] for p in self.params], dtype=float)
        return {"y": np.array([float(feats @ beta)])}

    def __repr__(self):
        return f"LinearSimulator(n_features={self.n_features})"


SIMULATORS = {
    "gipps": GippsSimulator,
    "siegloch": SieglochSimulator,
    "queue": QueueSimulator,
    "linear": LinearSimulator,
}


def get_simulator(name: str, **options) -> Simulator:
    try:
        cls = SIMULATORS[name]
    except KeyError:
        raise ValueError(f"unknown simulator {name!r}; choose from {sorted(SIMULATORS)}") from None
    return cls(**options)
