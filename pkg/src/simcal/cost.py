"""Goodness-of-fit costs and the replication-averaged, regularised loss."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Mapping

import numpy as np

from .core import Dataset, SeedStream
from .model import Model, predict_records
from .simulators import SimulationError
from .space import ParameterSpace

PERCENT_GUARD = 1e-9


class CostError(ValueError):
    pass


class CostKind(str, enum.Enum):
    RMSE = "RMSE"
    RMSPE = "RMSPE"
    MAE = "MAE"
    MAPE = "MAPE"
    GEH = "GEH"
    THEILU = "TheilU"
    KS = "KS"

    @classmethod
    def parse(cls, value) -> CostKind:
        if isinstance(value, cls):
            return value
        for kind in cls:
            if kind.value.lower() == str(value).lower():
                return kind
        raise CostError(f"unknown cost kind {value!r}; choose from {[k.value for k in cls]}")


def _pair(sim, obs) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(sim, dtype=float).reshape(-1)
    o = np.asarray(obs, dtype=float).reshape(-1)
    if s.size != o.size:
        raise CostError(f"length mismatch: simulated {s.size} vs observed {o.size}")
    if s.size == 0:
        raise CostError("cost needs at least one value")
    return s, o


def _relative(s, o):
    if np.any(np.abs(o) < PERCENT_GUARD):
        raise CostError("percentage cost with an observed value of (near) zero")
    return (s - o) / o


def _ks(s, o):
    pooled = np.concatenate([s, o])
    fs = np.searchsorted(np.sort(s), pooled, side="right") / s.size
    fo = np.searchsorted(np.sort(o), pooled, side="right") / o.size
    return float(np.max(np.abs(fs - fo)))


def eval_cost(kind: CostKind | str, sim, obs) -> float:
    """Distance between a simulated and an observed vector.

    KS treats the entries of each vector as a sample and compares their
    empirical CDFs; GEH is applied elementwise to volumes and averaged.
    """
    kind = CostKind.parse(kind)
    s, o = _pair(sim, obs)
    if kind is CostKind.RMSE:
        d = s - o
        return math.sqrt(float(d @ d) / d.size)
    if kind is CostKind.MAE:
        return float(np.abs(s - o).sum()) / s.size
    if kind is CostKind.RMSPE:
        return float(np.sqrt(np.mean(_relative(s, o) ** 2)))
    if kind is CostKind.MAPE:
        return float(np.mean(np.abs(_relative(s, o))))
    if kind is CostKind.GEH:
        if np.any(s < 0) or np.any(o < 0):
            raise CostError("GEH needs non-negative volumes")
        total = s + o
        if np.any(total <= 0):
            raise CostError("GEH undefined where simulated and observed volumes are both zero")
        return float(np.mean(np.sqrt(2.0 * (s - o) ** 2 / total)))
    if kind is CostKind.THEILU:
        num = np.sqrt(np.mean((s - o) ** 2))
        if num == 0.0:
            return 0.0
        return float(num / (np.sqrt(np.mean(o ** 2)) + np.sqrt(np.mean(s ** 2))))
    return _ks(s, o)


REGULARIZERS = ("zero", "squared_distance")


def eval_regularizer(name: str, theta, reference, space: ParameterSpace) -> float:
    """Penalty on ``theta``; ``squared_distance`` is scaled by bound widths."""
    if name == "zero":
        return 0.0
    if name != "squared_distance":
        raise CostError(f"unknown regularizer {name!r}; choose from {list(REGULARIZERS)}")
    if reference is None:
        raise CostError("squared_distance regularizer needs a reference vector")
    x = space.as_array(theta)
    try:
        ref = space.as_array(reference)
    except ValueError as exc:
        raise CostError(f"regularizer reference: {exc}") from None
    nc = space.n_continuous
    z = (x[:nc] - ref[:nc]) / space.width[:nc]
    return float(z @ z)


@dataclass(frozen=True)
class LossSpec:
    """Per-channel costs and weights, replication count and regulariser.

    Weights are normalised to sum to one.
    """

    channels: Mapping[str, tuple[CostKind, float]]
    replications: int = 1
    lam: float = 0.0
    regularizer: str = "zero"
    reference: Mapping[str, float] | None = None
    weights: Mapping[str, float] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        parsed = {}
        for ch, entry in self.channels.items():
            if isinstance(entry, (str, CostKind)):
                kind, w = CostKind.parse(entry), 1.0
            else:
                kind, w = CostKind.parse(entry[0]), float(entry[1])
            if not w >= 0:
                raise CostError(f"channel {ch!r}: weight must be >= 0")
            parsed[ch] = (kind, w)
        total = sum(w for _, w in parsed.values())
        if not total > 0:
            raise CostError("at least one channel needs a positive weight")
        if self.replications < 1:
            raise CostError("replications must be >= 1")
        if not self.lam >= 0:
            raise CostError("regularization coefficient must be >= 0")
        if self.regularizer not in REGULARIZERS:
            raise CostError(f"unknown regularizer {self.regularizer!r}; choose from {list(REGULARIZERS)}")
        object.__setattr__(self, "channels", MappingProxyType(parsed))
        object.__setattr__(self, "weights", MappingProxyType({ch: w / total for ch, (_, w) in parsed.items()}))

    def without_regularizer(self) -> LossSpec:
        return LossSpec(dict(self.channels), self.replications, 0.0, self.regularizer, self.reference)

    def with_lambda(self, lam: float) -> LossSpec:
        return LossSpec(dict(self.channels), self.replications, lam, self.regularizer, self.reference)

    def record_cost(self, sim: Mapping[str, np.ndarray], obs: Mapping[str, np.ndarray]) -> float:
        total = 0.0
        for ch, (kind, _) in self.channels.items():
            w = self.weights[ch]
            if w == 0:
                continue
            if ch not in sim:
                raise CostError(f"simulated record has no channel {ch!r}")
            total += w * eval_cost(kind, sim[ch], obs[ch])
        return total


def point_costs(spec: LossSpec, model: Model, theta, ds: Dataset, seed: SeedStream) -> np.ndarray:
    """Replication-averaged weighted cost for each data point (no regulariser).

    Point ``i`` draws its replications from the substream ``seed/point:i``.
    """
    x = model.space.check(theta)
    mu, sigma = model.split(x)
    out = np.empty(len(ds))
    for i, p in enumerate(ds):
        try:
            records = predict_records(model, p.x_obs, mu, sigma, spec.replications, seed.derive("point", i))
            costs = [spec.record_cost(rec, p.y_obs) for rec in records]
            out[i] = costs[0] if len(costs) == 1 else math.fsum(costs) / len(costs)
        except CostError as exc:
            raise CostError(f"point {i}: {exc}") from exc
        except SimulationError as exc:
            raise SimulationError(f"point {i}: {exc}") from exc
    return out


def eval_loss(spec: LossSpec, model: Model, theta, ds: Dataset, seed: SeedStream) -> float:
    if len(ds) == 0:
        raise CostError("loss needs a non-empty dataset")
    residual = float(np.mean(point_costs(spec, model, theta, ds, seed)))
    if spec.lam == 0:
        return residual
    return residual + spec.lam * eval_regularizer(spec.regularizer, theta, spec.reference, model.space)
