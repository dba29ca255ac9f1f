"""The model: input estimator, simulator and additive observation noise."""

from __future__ import annotations

from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Callable, Mapping

import numpy as np

from .core import DataError, Dataset, SeedStream
from .simulators import SimulationError, Simulator
from .space import ParameterSpace


def identity_input(x_obs: Mapping[str, np.ndarray]) -> Mapping[str, np.ndarray]:
    return x_obs


def apply_observation_noise(y: Mapping[str, np.ndarray], sigma: Mapping[str, float],
                            seed: SeedStream) -> dict[str, np.ndarray]:
    """Add independent Gaussian noise to each channel named in ``sigma``.

    Channels are visited in sorted order so the draw sequence does not depend
    on dict ordering.  A zero standard deviation leaves a channel untouched.
    """
    for ch, sd in sigma.items():
        if not sd >= 0:
            raise ValueError(f"observation noise sd for {ch!r} must be >= 0, got {sd}")
    out = {k: np.asarray(v, dtype=float) for k, v in y.items()}
    active = sorted(ch for ch, sd in sigma.items() if sd > 0 and ch in out)
    if not active:
        return out
    rng = seed.rng()
    for ch in active:
        out[ch] = out[ch] + rng.normal(0.0, sigma[ch], size=out[ch].shape)
    return out


@dataclass(frozen=True)
class Model:
    """Simulator plus observation layer over a calibrated parameter space.

    Parameters
    ----------
    simulator : Simulator
    space : ParameterSpace
        The parameters being calibrated.
    frozen : mapping
        Fixed values for every other simulator or noise parameter.
    noise : mapping
        Output channel -> noise standard deviation, given either as a number
        or as the name of a parameter (in ``space`` or ``frozen``).
    input_estimator : callable, optional
        Maps an observed input record to the simulator input; identity by default.
    """

    simulator: Simulator
    space: ParameterSpace
    frozen: Mapping[str, float] = field(default_factory=dict)
    noise: Mapping[str, str | float] = field(default_factory=dict)
    input_estimator: Callable[[Mapping[str, np.ndarray]], Mapping[str, np.ndarray]] = identity_input

    def __post_init__(self):
        object.__setattr__(self, "frozen", MappingProxyType({k: float(v) for k, v in self.frozen.items()}))
        object.__setattr__(self, "noise", MappingProxyType(dict(self.noise)))
        calibrated = set(self.space.names)
        both = calibrated & set(self.frozen)
        if both:
            raise ValueError(f"parameters both calibrated and frozen: {sorted(both)}")
        required = set(self.simulator.params) | set(self.noise_parameters)
        missing = required - calibrated - set(self.frozen)
        if missing:
            raise ValueError(f"parameters neither calibrated nor frozen: {sorted(missing)}")
        unknown = calibrated - required
        if unknown:
            raise ValueError(f"calibrated parameters not used by the model: {sorted(unknown)}")
        for ch, sd in self.noise.items():
            if ch not in self.simulator.outputs:
                raise ValueError(f"noise declared for unknown output channel {ch!r}")
            if not isinstance(sd, str) and not float(sd) >= 0:
                raise ValueError(f"noise sd for {ch!r} must be >= 0")
            if isinstance(sd, str) and sd in self.frozen and not self.frozen[sd] >= 0:
                raise ValueError(f"frozen noise parameter {sd!r} must be >= 0")

    @property
    def noise_parameters(self) -> tuple[str, ...]:
        return tuple(sorted({v for v in self.noise.values() if isinstance(v, str)}))

    @property
    def deterministic(self) -> bool:
        return not self.simulator.stochastic

    def parameters(self, theta) -> dict[str, float]:
        """Full parameter mapping: frozen values merged with calibrated ``theta``."""
        values = dict(self.frozen)
        values.update(zip(self.space.names, self.space.as_array(theta).tolist()))
        return values

    def split(self, theta) -> tuple[dict[str, float], dict[str, float]]:
        """Dynamic parameters and per-channel noise sds for ``theta``."""
        values = self.parameters(theta)
        mu = {k: values[k] for k in self.simulator.params}
        sigma = {ch: values[sd] if isinstance(sd, str) else float(sd) for ch, sd in self.noise.items()}
        return mu, sigma

    def with_frozen(self, **values: float) -> Model:
        """Copy with extra frozen values; calibrated names are left to ``space``."""
        frozen = dict(self.frozen)
        frozen.update({k: v for k, v in values.items() if k not in self.space.names})
        return Model(self.simulator, self.space, frozen, self.noise, self.input_estimator)

    def with_space(self, space: ParameterSpace, theta_full: Mapping[str, float]) -> Model:
        """Re-partition calibrated vs frozen parameters using ``theta_full`` for the frozen ones."""
        names = set(self.simulator.params) | set(self.noise_parameters)
        frozen = {k: float(theta_full[k]) for k in names if k not in space.names}
        return Model(self.simulator, space, frozen, self.noise, self.input_estimator)

    def simulate(self, x_obs, theta, seed: SeedStream | None = None) -> dict[str, np.ndarray]:
        """One noise-free simulator run."""
        mu, _ = self.split(theta)
        return self.simulator(self.input_estimator(x_obs), mu, seed)


def model_predict(model: Model, x_obs: Mapping[str, np.ndarray], theta, replications: int,
                  seed: SeedStream) -> list[dict[str, np.ndarray]]:
    """Run the model ``replications`` times on one input record.

    Replication ``r`` uses the substreams ``seed/rep:r`` for the simulator and
    ``seed/noise:r`` for observation noise.
    """
    x = model.space.check(theta)
    mu, sigma = model.split(x)
    return predict_records(model, x_obs, mu, sigma, replications, seed)


def predict_records(model: Model, x_obs, mu: Mapping[str, float], sigma: Mapping[str, float],
                    replications: int, seed: SeedStream) -> list[dict[str, np.ndarray]]:
    if replications < 1:
        raise ValueError("replications must be >= 1")
    x_hat = model.input_estimator(x_obs)
    noisy = any(sd > 0 for sd in sigma.values())
    records = []
    base = None
    for r in range(replications):
        try:
            if model.simulator.stochastic:
                out = model.simulator(x_hat, mu, seed.derive("rep", r))
            else:
                # a deterministic simulator is a pure function: run it once
                if base is None:
                    base = model.simulator(x_hat, mu, None)
                out = base
        except (SimulationError, ValueError) as exc:
            raise SimulationError(f"replication {r}: {exc}") from exc
        if noisy:
            out = apply_observation_noise(out, sigma, seed.derive("noise", r))
        elif r > 0:
            out = {k: np.array(v, dtype=float) for k, v in out.items()}
        records.append(out)
    return records


def gipps_desired_speed(ds: Dataset, channel: str = "v") -> dict[str, float]:
    """Desired speed as the 99th percentile (linear interpolation) of observed speeds."""
    try:
        speeds = ds.channel_values(channel)
    except DataError:
        raise DataError(f"direct estimator needs the {channel!r} channel") from None
    return {"V": float(np.percentile(speeds, 99.0))}


DIRECT_ESTIMATORS: dict[str, Callable[[Dataset], dict[str, float]]] = {
    "gipps_desired_speed": gipps_desired_speed,
}


def direct_estimate(kind: str, ds: Dataset) -> dict[str, float]:
    """Estimate a subset of parameters from data without running the simulator."""
    try:
        fn = DIRECT_ESTIMATORS[kind]
    except KeyError:
        raise ValueError(f"unknown direct estimator {kind!r}; choose from {sorted(DIRECT_ESTIMATORS)}") from None
    return fn(ds)
