"""Estimator-style wrappers around calibration and Bayesian inference.

Both classes follow the scikit-learn conventions: hyperparameters are set in
``__init__`` and stored verbatim, ``fit`` learns attributes with a trailing
underscore, and ``clone``/``get_params`` work out of the box.
"""

from __future__ import annotations

from typing import Mapping, Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_dataset, check_int, check_real, check_seed
from .bayes import Prior, chain_diagnostics, posterior_summary, rw_metropolis, LogPosterior
from .core import Dataset
from .cost import LossSpec
from .model import Model
from .optimize import OptimizerConfig, calibrate
from .simulators import get_simulator
from .space import ParameterSpace
from .validate import error_on


def make_model(simulator: str, bounds: Mapping[str, Sequence[float]], frozen: Mapping[str, float] | None = None,
               noise: Mapping[str, str | float] | None = None, discrete: Mapping[str, Sequence[float]] | None = None,
               simulator_options: Mapping | None = None) -> Model:
    """Build a :class:`Model` from plain mappings."""
    space = ParameterSpace(tuple((n, b[0], b[1]) for n, b in (bounds or {}).items()),
                           tuple((n, tuple(v)) for n, v in (discrete or {}).items()))
    return Model(get_simulator(simulator, **dict(simulator_options or {})), space, dict(frozen or {}),
                 dict(noise or {}))


def _input_records(X):
    if isinstance(X, Dataset):
        return [p.x_obs for p in X]
    if isinstance(X, Mapping):
        return [X]
    return list(X)


class _ModelParams(BaseEstimator):
    def _model(self) -> Model:
        if not self.bounds:
            raise ValueError("bounds must name at least one calibrated parameter")
        return make_model(self.simulator, self.bounds, self.frozen, self.noise, self.discrete,
                          self.simulator_options)

    def predict(self, X) -> list[dict[str, np.ndarray]]:
        """Noise-free simulator output at the fitted parameters, one record per input."""
        check_is_fitted(self, "theta_")
        seed = check_seed(self.seed).derive("predict")
        return [self.model_.simulate(x, self.theta_.values, seed.derive("point", i))
                for i, x in enumerate(_input_records(X))]


class SimulatorCalibrator(_ModelParams):
    """Extremum-estimation calibrator.

    Parameters
    ----------
    simulator : str
        Registered simulator name (``gipps``, ``siegloch``, ``queue``, ``linear``).
    bounds : dict
        ``name -> (lower, upper)`` for each calibrated continuous parameter.
    frozen : dict, optional
        Values of the remaining simulator and noise parameters.
    channels : dict, optional
        ``channel -> cost kind`` or ``(cost kind, weight)``; defaults to RMSE
        on the simulator's first output.
    optimizer : {'grid', 'nelder_mead', 'genetic', 'spsa'}
    starts : int
        Number of multi-start runs; their spread is kept in ``dispersion_``.

    Attributes
    ----------
    theta_ : ParameterVector
    result_ : CalibrationResult
    dispersion_ : MultiStartReport
    """

    def __init__(self, simulator: str = "linear", bounds=None, frozen=None, noise=None, discrete=None,
                 simulator_options=None, channels=None, replications: int = 1, lam: float = 0.0,
                 regularizer: str = "zero", reference=None, optimizer: str = "nelder_mead", hyper=None,
                 budget: int = 10_000, starts: int = 1, init=None, seed=0, n_jobs: int = 1):
        self.simulator = simulator
        self.bounds = bounds
        self.frozen = frozen
        self.noise = noise
        self.discrete = discrete
        self.simulator_options = simulator_options
        self.channels = channels
        self.replications = replications
        self.lam = lam
        self.regularizer = regularizer
        self.reference = reference
        self.optimizer = optimizer
        self.hyper = hyper
        self.budget = budget
        self.starts = starts
        self.init = init
        self.seed = seed
        self.n_jobs = n_jobs

    def _loss_spec(self, model: Model) -> LossSpec:
        channels = self.channels or {model.simulator.outputs[0]: "RMSE"}
        return LossSpec(dict(channels), check_int(self.replications, "replications", 1),
                        check_real(self.lam, "lam", 0.0), self.regularizer, self.reference)

    def fit(self, X: Dataset, y=None):
        check_dataset(X)
        model = self._model()
        spec = self._loss_spec(model)
        seed = check_seed(self.seed)
        config = OptimizerConfig(self.optimizer, dict(self.hyper or {}), seed, check_int(self.budget, "budget", 1))
        init = None if self.init is None else model.space.as_array(self.init)
        best, report = calibrate(model, spec, X, config, init, check_int(self.starts, "starts", 1), seed,
                                 check_int(self.n_jobs, "n_jobs", 1))
        self.model_, self.loss_spec_ = model, spec
        self.result_, self.dispersion_ = best, report
        self.theta_ = best.theta_hat
        return self

    def score(self, X: Dataset, y=None) -> float:
        """Negative error (regulariser excluded), so larger is better."""
        check_is_fitted(self, "theta_")
        check_dataset(X)
        return -error_on(X, self.model_, self.theta_, self.loss_spec_, check_seed(self.seed).derive("score"))


class BayesianCalibrator(_ModelParams):
    """Random-walk Metropolis posterior over the calibrated parameters.

    ``priors`` maps names to ``(kind, m, s)``; unspecified names get a uniform
    prior on their bounds.  ``theta_`` is the posterior mean.

    Attributes
    ----------
    posterior_ : Posterior
    summary_ : PosteriorSummary
    diagnostics_ : ChainDiagnostics or None
    """

    def __init__(self, simulator: str = "linear", bounds=None, frozen=None, noise=None, discrete=None,
                 simulator_options=None, priors=None, iterations: int = 20_000, burn_in: int = 2_000,
                 thin: int = 1, scales=None, init=None, alpha: float = 0.05, seed=0):
        self.simulator = simulator
        self.bounds = bounds
        self.frozen = frozen
        self.noise = noise
        self.discrete = discrete
        self.simulator_options = simulator_options
        self.priors = priors
        self.iterations = iterations
        self.burn_in = burn_in
        self.thin = thin
        self.scales = scales
        self.init = init
        self.alpha = alpha
        self.seed = seed

    def fit(self, X: Dataset, y=None):
        check_dataset(X)
        model = self._model()
        prior = Prior.from_space(model.space, self.priors)
        target = LogPosterior(model, prior, X)
        init = model.space.midpoint if self.init is None else model.space.as_array(self.init)
        post = rw_metropolis(target, model.space, init, check_int(self.iterations, "iterations", 1),
                             check_int(self.burn_in, "burn_in", 0), check_int(self.thin, "thin", 1),
                             self.scales, check_seed(self.seed))
        self.model_, self.prior_, self.posterior_ = model, prior, post
        self.summary_ = posterior_summary(post, self.alpha)
        self.diagnostics_ = chain_diagnostics(post) if len(post) >= 100 else None
        self.theta_ = model.space.vector(self.summary_.mean)
        return self
