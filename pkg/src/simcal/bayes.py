"""Bayesian calibration: priors, Gaussian likelihood, random-walk Metropolis,
MAP estimation, posterior summaries and a normal hierarchy over units."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy.special import log_ndtr

from .core import Dataset, SeedStream, as_seed_stream, parallel_map
from .model import Model, model_predict
from .optimize import CalibrationResult, OptimizerConfig, multi_start
from .space import ParameterSpace, ParameterVector

LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)
PRIOR_KINDS = ("uniform", "normal", "lognormal")


class LikelihoodError(ValueError):
    pass


def _log_diff_ndtr(lo: float, hi: float) -> float:
    """``log(Phi(hi) - Phi(lo))`` without cancellation in either tail."""
    if lo > 0:  # both in the upper tail: use symmetry
        lo, hi = -hi, -lo
    a, b = log_ndtr(lo), log_ndtr(hi)
    return float(b + np.log1p(-np.exp(a - b)))


def truncnorm_logpdf(x, mean: float, sd: float, lo: float, hi: float):
    """Log density of a normal(mean, sd) truncated to ``[lo, hi]``; ``-inf`` outside."""
    x = np.asarray(x, dtype=float)
    z = (x - mean) / sd
    log_z = _log_diff_ndtr((lo - mean) / sd, (hi - mean) / sd)
    out = -0.5 * z * z - LOG_SQRT_2PI - math.log(sd) - log_z
    out = np.where((x >= lo) & (x <= hi), out, -np.inf)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class PriorComponent:
    """One independent prior factor on the bounded interval ``[lower, upper]``.

    ``normal`` and ``lognormal`` are truncated to the interval; for
    ``lognormal``, ``m`` and ``s`` are the mean and sd of ``log(theta)``.
    """

    kind: str
    lower: float
    upper: float
    m: float = 0.0
    s: float = 1.0

    def __post_init__(self):
        if self.kind not in PRIOR_KINDS:
            raise ValueError(f"unknown prior kind {self.kind!r}; choose from {list(PRIOR_KINDS)}")
        if not self.lower < self.upper:
            raise ValueError("prior support needs lower < upper")
        if self.kind != "uniform" and not self.s > 0:
            raise ValueError("prior scale s must be positive")
        if self.kind == "lognormal" and self.lower < 0:
            raise ValueError("lognormal prior needs a non-negative lower bound")
        if self.kind == "normal":
            log_z = _log_diff_ndtr((self.lower - self.m) / self.s, (self.upper - self.m) / self.s)
        elif self.kind == "lognormal":
            lo = -math.inf if self.lower == 0 else (math.log(self.lower) - self.m) / self.s
            log_z = _log_diff_ndtr(lo, (math.log(self.upper) - self.m) / self.s)
        else:
            log_z = math.log(self.upper - self.lower)
        if not math.isfinite(log_z):
            raise ValueError(f"prior {self.kind}(m={self.m}, s={self.s}) has no mass on "
                             f"[{self.lower}, {self.upper}]")
        object.__setattr__(self, "_log_z", log_z)

    def logpdf(self, x: float) -> float:
        if not self.lower <= x <= self.upper:
            return -math.inf
        if self.kind == "uniform":
            return -self._log_z
        if self.kind == "normal":
            z = (x - self.m) / self.s
            return -0.5 * z * z - LOG_SQRT_2PI - math.log(self.s) - self._log_z
        if x <= 0:
            return -math.inf
        z = (math.log(x) - self.m) / self.s
        return -0.5 * z * z - LOG_SQRT_2PI - math.log(self.s) - math.log(x) - self._log_z


@dataclass(frozen=True)
class Prior:
    """Independent prior over the continuous components of a parameter space."""

    names: tuple[str, ...]
    components: tuple[PriorComponent, ...]

    @classmethod
    def from_space(cls, space: ParameterSpace, spec: Mapping[str, Mapping | Sequence] | None = None) -> Prior:
        """Uniform over the bounds unless ``spec`` gives ``(kind, m, s)`` for a name."""
        if space.discrete:
            raise ValueError("Bayesian calibration supports continuous parameters only")
        spec = dict(spec or {})
        unknown = set(spec) - set(space.names)
        if unknown:
            raise ValueError(f"priors given for unknown parameters: {sorted(unknown)}")
        comps = []
        for name, lo, hi in space.continuous:
            entry = spec.get(name, ("uniform",))
            if isinstance(entry, Mapping):
                entry = (entry.get("kind", "uniform"), entry.get("m", 0.0), entry.get("s", 1.0))
            kind, *rest = entry
            comps.append(PriorComponent(kind, lo, hi, *[float(r) for r in rest]))
        return cls(space.names, tuple(comps))

    def logpdf(self, theta) -> float:
        x = np.asarray(theta, dtype=float).reshape(-1)
        total = 0.0
        for c, v in zip(self.components, x.tolist()):
            lp = c.logpdf(v)
            if lp == -math.inf:
                return -math.inf
            total += lp
        return total


class LogLikelihood:
    """Gaussian log-likelihood of the noisy output channels of ``model``.

    Inputs are treated as exact.  Each point is simulated once per call.
    """

    def __init__(self, model: Model, ds: Dataset):
        if model.simulator.stochastic:
            raise LikelihoodError(
                f"simulator {model.simulator.name!r} is stochastic: its likelihood cannot be evaluated "
                "in closed form, so likelihood-based inference is unavailable")
        if not model.noise:
            raise LikelihoodError("the model declares no observation noise, so it has no likelihood")
        if len(ds) == 0:
            raise LikelihoodError("likelihood needs a non-empty dataset")
        self.model = model
        self.channels = tuple(sorted(model.noise))
        missing = [ch for ch in self.channels if ch not in ds.schema.output_names]
        if missing:
            raise LikelihoodError(f"dataset lacks the noisy output channels {missing}")
        self.inputs = [model.input_estimator(p.x_obs) for p in ds]
        self.observed = [{ch: np.asarray(p.y_obs[ch]) for ch in self.channels} for p in ds]

    def __call__(self, theta) -> float:
        mu, sigma = self.model.split(theta)
        for ch in self.channels:
            if not sigma[ch] > 0:
                raise LikelihoodError(f"noise sd for channel {ch!r} must be positive, got {sigma[ch]}")
        total = 0.0
        for i, (x, obs) in enumerate(zip(self.inputs, self.observed)):
            try:
                sim = self.model.simulator(x, mu, None)
            except ValueError as exc:
                raise ValueError(f"point {i}: {exc}") from exc
            for ch in self.channels:
                r = (obs[ch] - sim[ch]) / sigma[ch]
                total += -0.5 * float(r @ r) - r.size * (math.log(sigma[ch]) + LOG_SQRT_2PI)
        return total


class LogPosterior:
    """Unnormalised log posterior ``log p(D|theta) + log p(theta)``."""

    def __init__(self, model: Model, prior: Prior, ds: Dataset):
        if prior.names != model.space.names:
            raise ValueError(f"prior names {prior.names} do not match the space {model.space.names}")
        self.prior = prior
        self.loglik = LogLikelihood(model, ds)

    def __call__(self, theta) -> float:
        lp = self.prior.logpdf(theta)
        if lp == -math.inf:
            return -math.inf
        return self.loglik(theta) + lp


def log_posterior(model: Model, prior: Prior, ds: Dataset, theta) -> float:
    return LogPosterior(model, prior, ds)(model.space.as_array(theta))


@dataclass(frozen=True)
class Posterior:
    """Samples (rows) with their unnormalised log densities."""

    names: tuple[str, ...]
    samples: np.ndarray
    log_density: np.ndarray | None = None
    acceptance_rate: float = math.nan
    burn_in: int = 0
    thin: int = 1
    seed: SeedStream | None = None
    info: Mapping[str, object] = field(default_factory=dict)

    def __post_init__(self):
        s = np.array(self.samples, dtype=float)
        if s.ndim == 1:
            s = s[:, None]
        if s.ndim != 2 or s.shape[1] != len(self.names):
            raise ValueError("samples must be an (n, len(names)) array")
        s.flags.writeable = False
        object.__setattr__(self, "samples", s)
        object.__setattr__(self, "names", tuple(self.names))

    def __len__(self) -> int:
        return self.samples.shape[0]

    def vectors(self) -> list[ParameterVector]:
        return [ParameterVector(self.names, row) for row in self.samples]

    def column(self, name: str) -> np.ndarray:
        return self.samples[:, self.names.index(name)]


def rw_metropolis(log_target: Callable[[np.ndarray], float], space: ParameterSpace, init, iterations: int,
                  burn_in: int = 0, thin: int = 1, scales=None, seed: SeedStream | int = 0) -> Posterior:
    """Random-walk Metropolis with independent Gaussian increments.

    Each iteration draws the increment vector and then one uniform, whatever
    the outcome; proposals outside the bounds are rejected.  Scales default
    to 5% of each bound width.  Iterations ``burn_in, burn_in+thin, ...`` are
    kept.
    """
    seed = as_seed_stream(seed)
    if space.discrete:
        raise ValueError("random-walk Metropolis needs continuous parameters")
    if not iterations > burn_in >= 0 or thin < 1:
        raise ValueError("need iterations > burn_in >= 0 and thin >= 1")
    scale = 0.05 * space.width if scales is None else np.broadcast_to(np.asarray(scales, float), (space.dim,))
    if not np.all(scale > 0):
        raise ValueError("proposal scales must be positive")
    x = space.as_array(init).copy()
    if not space.contains(x):
        raise ValueError("initial state infeasible: " + "; ".join(space.violations(x)))
    lp = float(log_target(x))
    if not math.isfinite(lp):
        raise ValueError(f"log target is not finite at the initial state ({lp})")
    chain = _RWChain(log_target, space.lower, space.upper, scale, seed.rng(), x, lp)
    n_keep = len(range(burn_in, iterations, thin))
    out = np.empty((n_keep, space.dim))
    dens = np.empty(n_keep)
    j = 0
    for it in range(iterations):
        chain.step()
        if it >= burn_in and (it - burn_in) % thin == 0:
            out[j], dens[j] = chain.x, chain.lp
            j += 1
    return Posterior(space.names, out, dens, chain.accepted / iterations, burn_in, thin, seed)


class _RWChain:
    """Single Metropolis chain state; shared by the plain and hierarchical samplers."""

    def __init__(self, log_target, lower, upper, scale, rng, x, lp):
        self.log_target, self.lower, self.upper = log_target, lower, upper
        self.scale, self.rng = scale, rng
        self.x, self.lp = x, lp
        self.accepted = 0

    def step(self) -> None:
        prop = self.x + self.scale * self.rng.normal(size=self.x.size)
        log_u = math.log(self.rng.random())
        if np.any(prop < self.lower) or np.any(prop > self.upper):
            return
        lp_new = float(self.log_target(prop))
        if log_u < lp_new - self.lp:
            self.x, self.lp = prop, lp_new
            self.accepted += 1


def map_estimate(model: Model, prior: Prior, ds: Dataset, config: OptimizerConfig, init=None,
                 starts: int = 1, seed: SeedStream | int | None = None, n_jobs: int = 1) -> CalibrationResult:
    """Maximum a posteriori estimate by minimising the negative log posterior.

    The returned ``loss_hat`` is the minimised negative log posterior.
    """
    target = LogPosterior(model, prior, ds)

    def neg(x):
        v = target(x)
        return math.inf if v == -math.inf else -v

    seed = config.seed if seed is None else as_seed_stream(seed)
    best, _ = multi_start(config, neg, model.space, starts, seed.derive("optimizer"), init, n_jobs)
    return best


@dataclass(frozen=True)
class PosteriorSummary:
    names: tuple[str, ...]
    mean: np.ndarray
    sd: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    alpha: float
    region_probability: float | None = None

    def as_dict(self) -> dict:
        out = {n: {"mean": float(m), "sd": float(s), "lower": float(lo), "upper": float(hi)}
               for n, m, s, lo, hi in zip(self.names, self.mean, self.sd, self.lower, self.upper)}
        return {"alpha": self.alpha, "components": out, "region_probability": self.region_probability}


def posterior_summary(post: Posterior, alpha: float = 0.05,
                      region: Mapping[str, tuple[float, float]] | None = None) -> PosteriorSummary:
    """Mean, sd (1/n), equal-tailed ``1-alpha`` interval, and the mass in a box."""
    if len(post) == 0:
        raise ValueError("empty posterior")
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    s = post.samples
    lo, hi = np.quantile(s, [alpha / 2, 1 - alpha / 2], axis=0)
    prob = None
    if region is not None:
        inside = np.ones(len(post), dtype=bool)
        for name, (a, b) in region.items():
            col = post.column(name)
            inside &= (col >= a) & (col <= b)
        prob = float(inside.mean())
    return PosteriorSummary(post.names, s.mean(axis=0), s.std(axis=0), lo, hi, alpha, prob)


def posterior_predictive(post: Posterior, model: Model, x_new, draws: int,
                         seed: SeedStream | int = 0) -> list[dict[str, np.ndarray]]:
    """Simulate new outputs at posterior draws resampled with replacement.

    Draw ``j`` runs one noisy replication under ``seed/predict:j``.
    """
    if len(post) == 0 or draws < 1:
        raise ValueError("need a non-empty posterior and draws >= 1")
    seed = as_seed_stream(seed)
    idx = seed.derive("resample").rng().integers(0, len(post), size=draws)
    cols = [post.names.index(n) for n in model.space.names]
    return [model_predict(model, x_new, post.samples[i, cols], 1, seed.derive("predict", j))[0]
            for j, i in enumerate(idx.tolist())]


def marginal(post: Posterior, components: Sequence[int | str]) -> Posterior:
    """Projection of the samples onto some components; log densities are dropped."""
    idx = []
    for c in components:
        if isinstance(c, str):
            if c not in post.names:
                raise ValueError(f"unknown component {c!r}")
            idx.append(post.names.index(c))
        else:
            if not 0 <= int(c) < len(post.names):
                raise ValueError(f"component index {c} out of range")
            idx.append(int(c))
    return Posterior(tuple(post.names[i] for i in idx), post.samples[:, idx], None, post.acceptance_rate,
                     post.burn_in, post.thin, post.seed, post.info)


# -- hierarchy -------------------------------------------------------------

def mean_name(name: str) -> str:
    return f"mean[{name}]"


def sd_name(name: str) -> str:
    return f"sd[{name}]"


def unit_name(i: int, name: str) -> str:
    return f"theta[{i}].{name}"


@dataclass(frozen=True)
class HierarchicalModel:
    """Units share ``model``; unit ``i`` has its own parameters ``theta_i``.

    ``theta_i`` given ``psi`` is normal with mean ``mean[name]`` and sd
    ``sd[name]`` per component, truncated to the space bounds.  Free
    components of ``psi`` live in ``psi_space`` with prior ``hyperprior``;
    the rest are fixed by ``fixed_psi``.
    """

    model: Model
    units: tuple[Dataset, ...]
    psi_space: ParameterSpace | None
    hyperprior: Prior | None = None
    fixed_psi: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "units", tuple(self.units))
        object.__setattr__(self, "fixed_psi", MappingProxyType({k: float(v) for k, v in self.fixed_psi.items()}))
        if not self.units:
            raise ValueError("hierarchical model needs at least one unit dataset")
        if self.model.space.discrete:
            raise ValueError("hierarchical model supports continuous parameters only")
        free = () if self.psi_space is None else self.psi_space.names
        expected = set(self.psi_names)
        given = set(free) | set(self.fixed_psi)
        if given != expected or set(free) & set(self.fixed_psi):
            raise ValueError(f"psi components must be split between psi_space and fixed_psi exactly once; "
                             f"expected {sorted(expected)}, got free={list(free)} fixed={sorted(self.fixed_psi)}")
        for name in self.model.space.names:
            sd = self.fixed_psi.get(sd_name(name))
            if sd is not None and not sd > 0:
                raise ValueError(f"{sd_name(name)} must be positive")
            if self.psi_space is not None and sd_name(name) in self.psi_space.names:
                lo = self.psi_space.continuous[self.psi_space.index(sd_name(name))][1]
                if lo < 0:
                    raise ValueError(f"{sd_name(name)} lower bound must be >= 0")
        if self.psi_space is not None:
            hp = self.hyperprior if self.hyperprior is not None else Prior.from_space(self.psi_space)
            if hp.names != self.psi_space.names:
                raise ValueError("hyperprior names do not match psi_space")
            object.__setattr__(self, "hyperprior", hp)

    @property
    def psi_names(self) -> tuple[str, ...]:
        names = self.model.space.names
        return tuple(mean_name(n) for n in names) + tuple(sd_name(n) for n in names)

    def psi_full(self, psi_free) -> np.ndarray:
        free = {} if self.psi_space is None else dict(zip(self.psi_space.names, np.asarray(psi_free, float)))
        return np.array([free[n] if n in free else self.fixed_psi[n] for n in self.psi_names])

    def unit_logprior(self, theta, psi_full) -> float:
        """``log p(theta_i | psi)`` with ``psi_full`` ordered as :attr:`psi_names`."""
        p = self.model.space.dim
        means, sds = psi_full[:p], psi_full[p:]
        total = 0.0
        for (_, lo, hi), v, m, s in zip(self.model.space.continuous, np.asarray(theta, float), means, sds):
            if not s > 0:
                return -math.inf
            total += truncnorm_logpdf(v, m, s, lo, hi)
        return total

    def unit_prior(self, psi_full) -> Prior:
        p = self.model.space.dim
        comps = tuple(PriorComponent("normal", lo, hi, m, s) for (_, lo, hi), m, s
                      in zip(self.model.space.continuous, psi_full[:p], psi_full[p:]))
        return Prior(self.model.space.names, comps)


def hierarchical_sample(hm: HierarchicalModel, iterations: int, burn_in: int = 0, thin: int = 1,
                        seed: SeedStream | int = 0, theta_scales=None, psi_scales=None,
                        init_theta=None, init_psi=None, n_jobs: int = 1) -> Posterior:
    """Metropolis-within-Gibbs over ``(psi, theta_1..theta_n)``.

    Each sweep updates every ``theta_i`` given ``psi`` (unit ``i`` draws from
    ``seed/unit:i``), then the free ``psi`` components given all ``theta_i``
    (from ``seed/psi``).  Columns are the ``psi`` names followed by
    ``theta[i].name`` for each unit.
    """
    seed = as_seed_stream(seed)
    space = hm.model.space
    if not iterations > burn_in >= 0 or thin < 1:
        raise ValueError("need iterations > burn_in >= 0 and thin >= 1")
    loglik = [LogLikelihood(hm.model, d) for d in hm.units]
    n = len(hm.units)
    psi_free = (np.empty(0) if hm.psi_space is None else
                hm.psi_space.as_array(init_psi if init_psi is not None else hm.psi_space.midpoint).copy())
    psi = hm.psi_full(psi_free)
    t_scale = 0.05 * space.width if theta_scales is None else np.broadcast_to(
        np.asarray(theta_scales, float), (space.dim,))
    thetas = np.tile(space.midpoint, (n, 1)) if init_theta is None else np.array(init_theta, float).reshape(n, -1)

    def unit_target(i):
        memo: dict[bytes, float] = {}  # likelihood of recent states; psi moves only change the prior

        def target(x):
            lp = hm.unit_logprior(x, current["psi"])
            if lp == -math.inf:
                return lp
            key = x.tobytes()
            ll = memo.get(key)
            if ll is None:
                if len(memo) > 8:
                    memo.clear()
                ll = memo[key] = loglik[i](x)
            return ll + lp
        return target

    current = {"psi": psi}
    chains = []
    for i in range(n):
        if not space.contains(thetas[i]):
            raise ValueError(f"unit {i}: initial state infeasible")
        target = unit_target(i)
        lp = target(thetas[i])
        if not math.isfinite(lp):
            raise ValueError(f"unit {i}: log target not finite at the initial state")
        chains.append(_RWChain(target, space.lower, space.upper, t_scale,
                               seed.derive("unit", i).rng(), thetas[i].copy(), lp))

    psi_chain = None
    if hm.psi_space is not None:
        p_scale = 0.05 * hm.psi_space.width if psi_scales is None else np.broadcast_to(
            np.asarray(psi_scales, float), (hm.psi_space.dim,))

        def psi_target(z):
            lp = hm.hyperprior.logpdf(z)
            if lp == -math.inf:
                return lp
            full = hm.psi_full(z)
            return lp + sum(hm.unit_logprior(c.x, full) for c in chains)

        if not math.isfinite(psi_target(psi_free)):
            raise ValueError("hyperparameter log target not finite at the initial state")
        psi_chain = _RWChain(psi_target, hm.psi_space.lower, hm.psi_space.upper, p_scale,
                             seed.derive("psi").rng(), psi_free, 0.0)

    names = hm.psi_names + tuple(unit_name(i, nm) for i in range(n) for nm in space.names)
    n_keep = len(range(burn_in, iterations, thin))
    out = np.empty((n_keep, len(names)))
    dens = np.empty(n_keep)
    j = 0

    def step_unit(i):
        try:
            chains[i].step()
        except Exception as exc:
            raise RuntimeError(f"unit {i}, sweep {sweep}: {exc}") from exc

    for sweep in range(iterations):
        parallel_map(step_unit, range(n), n_jobs)
        if psi_chain is not None:
            # the unit states changed, so refresh the current psi density before proposing
            psi_chain.lp = psi_chain.log_target(psi_chain.x)
            psi_chain.step()
            current["psi"] = hm.psi_full(psi_chain.x)
            for c in chains:
                c.lp = c.log_target(c.x)
        if sweep >= burn_in and (sweep - burn_in) % thin == 0:
            full = current["psi"]
            out[j, :len(full)] = full
            out[j, len(full):] = np.concatenate([c.x for c in chains])
            joint = sum(c.lp for c in chains)
            if psi_chain is not None:
                joint += hm.hyperprior.logpdf(psi_chain.x)
            dens[j] = joint
            j += 1

    steps = iterations * n
    accepted = sum(c.accepted for c in chains)
    info = {"unit_acceptance": tuple(c.accepted / iterations for c in chains)}
    if psi_chain is not None:
        info["psi_acceptance"] = psi_chain.accepted / iterations
        steps += iterations
        accepted += psi_chain.accepted
    return Posterior(names, out, dens, accepted / steps, burn_in, thin, seed, MappingProxyType(info))


def integrated_unit_prior(hm: HierarchicalModel, values: Sequence[float], order: int = 48) -> float:
    """Prior density of scalar unit parameters with ``psi`` integrated out.

    ``integral prod_i p(theta_i | psi) p(psi) dpsi`` by tensor Gauss-Legendre
    quadrature over the free ``psi`` box.  Needs a one-dimensional unit space.
    """
    if hm.model.space.dim != 1:
        raise ValueError("integrated prior is implemented for scalar unit parameters")
    if hm.psi_space is None:
        return float(math.exp(sum(hm.unit_logprior([v], hm.psi_full([])) for v in values)))
    nodes, weights = np.polynomial.legendre.leggauss(order)
    lo, hi = hm.psi_space.lower, hm.psi_space.upper
    axes = [(0.5 * (h - l) * nodes + 0.5 * (h + l), 0.5 * (h - l) * weights) for l, h in zip(lo, hi)]
    total = 0.0
    for combo in np.ndindex(*(order,) * hm.psi_space.dim):
        z = np.array([axes[d][0][c] for d, c in enumerate(combo)])
        w = math.prod(axes[d][1][c] for d, c in enumerate(combo))
        lp = hm.hyperprior.logpdf(z)
        if lp == -math.inf:
            continue
        full = hm.psi_full(z)
        dens = math.exp(lp)
        for v in values:
            dens *= math.exp(hm.unit_logprior([v], full))
        total += w * dens
    return total


# -- diagnostics -----------------------------------------------------------

def _autocorr(x: np.ndarray) -> np.ndarray:
    n = x.size
    y = x - x.mean()
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(y, size)
    acov = np.fft.irfft(f * np.conj(f), size)[:n] / n
    return acov / acov[0]


def effective_sample_size(x) -> float:
    """ESS with the initial positive sequence truncation of pair sums."""
    x = np.asarray(x, dtype=float).reshape(-1)
    n = x.size
    if np.ptp(x) == 0:
        return 1.0
    rho = _autocorr(x)
    tau = -1.0
    for k in range(0, n - 1, 2):
        pair = rho[k] + rho[k + 1]
        if pair <= 0:
            break
        tau += 2.0 * pair
    return float(min(max(n / tau, 1.0), n)) if tau > 0 else float(n)


@dataclass(frozen=True)
class ChainDiagnostics:
    names: tuple[str, ...]
    ess: np.ndarray
    mcse: np.ndarray
    lag1: np.ndarray
    acceptance_rate: float
    flags: tuple[str, ...]

    def as_dict(self) -> dict:
        comps = {n: {"ess": float(e), "mcse": float(m), "lag1": float(r)}
                 for n, e, m, r in zip(self.names, self.ess, self.mcse, self.lag1)}
        rate = None if math.isnan(self.acceptance_rate) else self.acceptance_rate
        return {"acceptance_rate": rate, "components": comps, "flags": list(self.flags)}


def chain_diagnostics(post: Posterior, min_samples: int = 100) -> ChainDiagnostics:
    """ESS, MCSE = sd/sqrt(ESS) and lag-1 autocorrelation per component.

    A constant component reports ESS 1 and autocorrelation 1.  Flags note
    acceptance rates outside [0.2, 0.5] and collapsed components.
    """
    n = len(post)
    if n < min_samples:
        raise ValueError(f"chain diagnostics need at least {min_samples} samples, got {n}")
    ess, mcse, lag1 = [], [], []
    flags = []
    for j, name in enumerate(post.names):
        col = post.samples[:, j]
        e = effective_sample_size(col)
        ess.append(e)
        mcse.append(col.std() / math.sqrt(e))
        if np.ptp(col) == 0:
            lag1.append(1.0)
            flags.append(f"{name}: chain did not move")
        else:
            lag1.append(float(_autocorr(col)[1]))
            spread = np.ptp(col) / max(np.max(np.abs(col)), 1.0)
            if spread < 1e-8:
                flags.append(f"{name}: near-zero sample variance")
    rate = post.acceptance_rate
    if not math.isnan(rate) and not 0.2 <= rate <= 0.5:
        flags.append(f"acceptance rate {rate:.3f} outside [0.2, 0.5]")
    return ChainDiagnostics(post.names, np.array(ess), np.array(mcse), np.array(lag1), rate, tuple(flags))
