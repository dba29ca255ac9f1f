"""Simulator calibration and validation toolkit.

Extremum estimation (grid, Nelder-Mead, genetic, SPSA), cross-validation
with bias-variance diagnosis, Bayesian inference with hierarchical pooling,
and a synthetic-data benchmarking harness for small traffic simulators.
"""

__version__ = "0.1.0"

from .core import (DataError, DataPoint, Dataset, Schema, Channel, SeedStream, SplitSpec, derive_seed,
                   k_fold, load_dataset, split_dataset, write_dataset)
from .space import Constraint, InfeasibleParameterError, ParameterSpace, ParameterVector
from .simulators import (CollisionError, GippsParams, GippsSimulator, LinearSimulator, QueueSimulator,
                         RoundaboutParams, SieglochSimulator, SimulationError, Simulator, capacity_siegloch,
                         get_simulator, simulate_gipps, simulate_queue)
from .model import Model, apply_observation_noise, direct_estimate, model_predict
from .cost import CostError, CostKind, LossSpec, eval_cost, eval_loss, eval_regularizer
from .optimize import (CalibrationResult, OptimizerConfig, OptimizerError, calibrate, genetic_algorithm,
                       grid_search, multi_start, nelder_mead, project_feasible, spsa)
from .validate import (DiagnosticsReport, cross_validate, diagnose_bias_variance, error_on,
                       scientific_validate, select_regularization, welch_t_test)
from .bayes import (HierarchicalModel, LikelihoodError, Posterior, Prior, chain_diagnostics, hierarchical_sample,
                    log_posterior, map_estimate, marginal, posterior_predictive, posterior_summary,
                    rw_metropolis)
from .bench import (SyntheticDGP, Pipeline, ensemble_compare, estimator_mse, loss_landscape,
                    oat_sensitivity, recover, synthesize, variance_decomposition)
from .estimators import BayesianCalibrator, SimulatorCalibrator

import types as _types

__all__ = sorted(n for n, v in globals().items() if not n.startswith("_") and not isinstance(v, _types.ModuleType))
