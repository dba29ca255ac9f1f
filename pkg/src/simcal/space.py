"""Feasible parameter regions and parameter vectors."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np


class InfeasibleParameterError(ValueError):
    pass


@dataclass(frozen=True)
class Constraint:
    """General constraint on a parameter vector.

    ``kind="eq"`` requires ``fn(theta) == 0``; ``kind="ineq"`` requires
    ``fn(theta) <= 0``.  ``fn`` receives a name -> value mapping.
    """

    name: str
    fn: Callable[[Mapping[str, float]], float]
    kind: str = "ineq"

    def __post_init__(self):
        if self.kind not in ("eq", "ineq"):
            raise ValueError(f"constraint kind must be 'eq' or 'ineq', got {self.kind!r}")

    def violation(self, values: Mapping[str, float]) -> float:
        r = float(self.fn(values))
        return abs(r) if self.kind == "eq" else max(r, 0.0)


@dataclass(frozen=True)
class ParameterSpace:
    """Box bounds for continuous parameters, admissible sets for discrete ones.

    Continuous components come first, then discrete ones, so a parameter
    vector is a flat float array ordered as :attr:`names`.
    """

    continuous: tuple[tuple[str, float, float], ...] = ()
    discrete: tuple[tuple[str, tuple[float, ...]], ...] = ()
    constraints: tuple[Constraint, ...] = ()

    def __post_init__(self):
        cont = tuple((str(n), float(lo), float(hi)) for n, lo, hi in self.continuous)
        disc = tuple((str(n), tuple(sorted(float(v) for v in vals))) for n, vals in self.discrete)
        object.__setattr__(self, "continuous", cont)
        object.__setattr__(self, "discrete", disc)
        object.__setattr__(self, "constraints", tuple(self.constraints))
        for name, lo, hi in cont:
            if not lo < hi:
                raise ValueError(f"parameter {name!r}: lower bound {lo} must be below upper bound {hi}")
        for name, vals in disc:
            if not vals:
                raise ValueError(f"discrete parameter {name!r} has an empty admissible set")
        if not cont and not disc:
            raise ValueError("parameter space must have at least one component")
        if len(set(self.names)) != len(self.names):
            raise ValueError(f"duplicate parameter names: {self.names}")

    @classmethod
    def from_bounds(cls, bounds: Mapping[str, Sequence[float]], **kw) -> ParameterSpace:
        return cls(tuple((n, b[0], b[1]) for n, b in bounds.items()), **kw)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(c[0] for c in self.continuous) + tuple(d[0] for d in self.discrete)

    @property
    def dim(self) -> int:
        return len(self.continuous) + len(self.discrete)

    @property
    def n_continuous(self) -> int:
        return len(self.continuous)

    @property
    def lower(self) -> np.ndarray:
        return np.array([c[1] for c in self.continuous] + [d[1][0] for d in self.discrete])

    @property
    def upper(self) -> np.ndarray:
        return np.array([c[2] for c in self.continuous] + [d[1][-1] for d in self.discrete])

    @property
    def width(self) -> np.ndarray:
        return self.upper - self.lower

    @property
    def midpoint(self) -> np.ndarray:
        mid = [(lo + hi) / 2 for _, lo, hi in self.continuous]
        mid += [vals[(len(vals) - 1) // 2] for _, vals in self.discrete]
        return np.array(mid)

    def index(self, name: str) -> int:
        return self.names.index(name)

    def as_array(self, theta) -> np.ndarray:
        """Coerce a ParameterVector, mapping or sequence into a flat array."""
        if isinstance(theta, ParameterVector):
            if theta.names != self.names:
                raise ValueError(f"parameter names {theta.names} do not match space {self.names}")
            return np.array(theta.values, dtype=float)
        if isinstance(theta, Mapping):
            missing = [n for n in self.names if n not in theta]
            if missing:
                raise ValueError(f"missing parameters {missing}")
            return np.array([float(theta[n]) for n in self.names])
        arr = np.asarray(theta, dtype=float).reshape(-1)
        if arr.size != self.dim:
            raise ValueError(f"expected {self.dim} parameter values, got {arr.size}")
        return arr

    def vector(self, theta) -> ParameterVector:
        return ParameterVector(self.names, self.as_array(theta))

    def violations(self, theta) -> list[str]:
        """Human-readable bound and admissible-set violations (empty if feasible)."""
        x = self.as_array(theta)
        out = []
        for j, (name, lo, hi) in enumerate(self.continuous):
            if not lo <= x[j] <= hi:
                out.append(f"{name}={x[j]:g} outside [{lo:g}, {hi:g}]")
        for k, (name, vals) in enumerate(self.discrete):
            v = x[self.n_continuous + k]
            if v not in vals:
                out.append(f"{name}={v:g} not in {list(vals)}")
        return out

    def contains(self, theta) -> bool:
        return not self.violations(theta)

    def check(self, theta) -> np.ndarray:
        x = self.as_array(theta)
        bad = self.violations(x)
        if bad:
            raise InfeasibleParameterError("infeasible parameters: " + "; ".join(bad))
        return x

    def constraint_residuals(self, theta) -> dict[str, float]:
        values = dict(zip(self.names, self.as_array(theta)))
        return {c.name: c.violation(values) for c in self.constraints}

    def sample_uniform(self, rng: np.random.Generator) -> np.ndarray:
        x = [rng.uniform(lo, hi) for _, lo, hi in self.continuous]
        x += [vals[rng.integers(len(vals))] for _, vals in self.discrete]
        return np.array(x, dtype=float)


@dataclass(frozen=True)
class ParameterVector:
    names: tuple[str, ...]
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        vals = np.array(self.values, dtype=float).reshape(-1)
        vals.flags.writeable = False
        object.__setattr__(self, "names", tuple(self.names))
        object.__setattr__(self, "values", vals)
        if len(self.names) != vals.size:
            raise ValueError("names and values differ in length")

    def __len__(self):
        return len(self.names)

    def __getitem__(self, name: str) -> float:
        return float(self.values[self.names.index(name)])

    def as_dict(self) -> dict[str, float]:
        return {n: float(v) for n, v in zip(self.names, self.values)}

    def __repr__(self):
        inner = ", ".join(f"{n}={v:.6g}" for n, v in zip(self.names, self.values))
        return f"ParameterVector({inner})"

    def __eq__(self, other):
        return (isinstance(other, ParameterVector) and self.names == other.names
                and np.array_equal(self.values, other.values))

    def __hash__(self):
        return hash((self.names, self.values.tobytes()))
