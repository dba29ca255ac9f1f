"""Statistical and scientific validation of a calibrated model."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Mapping, Sequence

import numpy as np
from scipy import stats

from .core import Dataset, SeedStream, as_seed_stream, k_fold, parallel_map
from .cost import CostKind, LossSpec, eval_loss
from .model import Model
from .optimize import OptimizerConfig, calibrate

CLASSES = ("under_fit", "over_fit", "acceptable", "inconclusive")


def error_on(split: Dataset, model: Model, theta, spec: LossSpec, seed: SeedStream) -> float:
    """Split error: the loss with the regulariser switched off."""
    return eval_loss(spec.with_lambda(0.0), model, theta, split, seed)


@dataclass(frozen=True)
class DiagnosticsReport:
    eps_tr: float
    eps_val: float
    eps_th: float
    classification: str
    ratio_big: float = 2.0
    tol: float = 0.25
    eps_te: float | None = None

    @property
    def val_over_tr(self) -> float:
        return self.eps_val / self.eps_tr if self.eps_tr > 0 else math.inf

    @property
    def tr_over_th(self) -> float:
        return self.eps_tr / self.eps_th

    def as_dict(self) -> dict:
        return {
            "eps_tr": self.eps_tr,
            "eps_val": self.eps_val,
            "eps_te": self.eps_te,
            "eps_th": self.eps_th,
            "classification": self.classification,
            "ratio_big": self.ratio_big,
            "tol": self.tol,
            "val_over_tr": self.val_over_tr if math.isfinite(self.val_over_tr) else None,
            "tr_over_th": self.tr_over_th,
        }


def classify_fit(eps_tr: float, eps_val: float, eps_th: float, ratio_big: float = 2.0,
                 tol: float = 0.25) -> str:
    """Label a (training, validation) error pair against the threshold ``eps_th``.

    ``tol`` operationalises "approximately equal" and ``ratio_big`` "much larger".
    Rules are checked in the order under_fit, over_fit, acceptable.
    """
    if min(eps_tr, eps_val) < 0 or not eps_th > 0:
        raise ValueError("errors must be non-negative and eps_th positive")
    if not ratio_big > 0 or not tol >= 0:
        raise ValueError("ratio_big must be positive and tol non-negative")
    if eps_val <= (1 + tol) * eps_tr and eps_tr > ratio_big * eps_th:
        return "under_fit"
    if eps_val > ratio_big * eps_tr and eps_tr <= (1 + tol) * eps_th:
        return "over_fit"
    if max(eps_tr, eps_val) <= (1 + tol) * eps_th:
        return "acceptable"
    return "inconclusive"


def diagnose_bias_variance(eps_tr: float, eps_val: float, eps_th: float, ratio_big: float = 2.0,
                           tol: float = 0.25, eps_te: float | None = None) -> DiagnosticsReport:
    label = classify_fit(eps_tr, eps_val, eps_th, ratio_big, tol)
    return DiagnosticsReport(float(eps_tr), float(eps_val), float(eps_th), label, ratio_big, tol,
                             None if eps_te is None else float(eps_te))


@dataclass(frozen=True)
class CVResult:
    cv_error: float
    fold_errors: tuple[float, ...]
    fold_thetas: tuple
    fold_sizes: tuple[int, ...]

    @property
    def fold_sd(self) -> float:
        return float(np.std(self.fold_errors))


def cross_validate(model: Model, spec: LossSpec, ds: Dataset, k: int, config: OptimizerConfig,
                   seed: SeedStream | int = 0, starts: int = 1, init=None, n_jobs: int = 1) -> CVResult:
    """k-fold cross-validation: calibrate on each training part, score the held-out fold.

    Fold ``f`` calibrates with seed ``seed/fold:f/fit`` and is scored with
    ``seed/fold:f/val``.  The regulariser in ``spec`` is used for fitting but
    not for scoring.
    """
    seed = as_seed_stream(seed)
    folds = k_fold(ds, k, seed)

    def run(f: int):
        train, val = folds[f]
        fs = seed.derive("fold", f)
        try:
            best, _ = calibrate(model, spec, train, config, init=init, starts=starts, seed=fs.derive("fit"))
        except Exception as exc:
            raise RuntimeError(f"fold {f}: calibration failed: {exc}") from exc
        return best.theta_hat, error_on(val, model, best.theta_hat, spec, fs.derive("val"))

    out = parallel_map(run, range(len(folds)), n_jobs)
    errors = tuple(e for _, e in out)
    return CVResult(float(np.mean(errors)), errors, tuple(t for t, _ in out), tuple(len(v) for _, v in folds))


def select_regularization(model: Model, spec: LossSpec, ds: Dataset, lambdas: Sequence[float], k: int,
                          config: OptimizerConfig, seed: SeedStream | int = 0, starts: int = 1, init=None,
                          n_jobs: int = 1) -> tuple[float, tuple[float, ...]]:
    """Pick the regularisation coefficient with the smallest k-fold CV error.

    Ties go to the earlier entry of ``lambdas``.  Returns ``(lam, cv_errors)``.
    """
    if not len(lambdas):
        raise ValueError("need at least one candidate lambda")
    seed = as_seed_stream(seed)
    errors = tuple(cross_validate(model, spec.with_lambda(lam), ds, k, config, seed, starts, init,
                                  n_jobs).cv_error for lam in lambdas)
    return float(lambdas[int(np.argmin(errors))]), errors


@dataclass(frozen=True)
class ScientificReport:
    errors: Mapping[str, float]
    kinds: Mapping[str, str]
    different_scenarios: bool = False
    scientific: bool = field(default=True, init=False)

    def as_dict(self) -> dict:
        return {"validation": "scientific", "different_scenarios": self.different_scenarios,
                "errors": {ch: {"cost": self.kinds[ch], "value": self.errors[ch]} for ch in self.errors}}


def scientific_validate(model: Model, theta, ds: Dataset, aux_channels: Mapping[str, CostKind | str],
                        calibration_channels: Sequence[str], seed: SeedStream | int = 0,
                        replications: int = 1, different_scenarios: bool = False) -> ScientificReport:
    """Score auxiliary output channels that played no part in calibration.

    ``ds`` may be the calibration data itself.  ``different_scenarios`` only
    labels the report; data from a different process is never treated as
    statistical validation.
    """
    overlap = sorted(set(aux_channels) & set(calibration_channels))
    if overlap:
        raise ValueError(f"auxiliary channels overlap the calibration channels: {overlap}")
    if not aux_channels:
        raise ValueError("need at least one auxiliary channel")
    seed = as_seed_stream(seed)
    errors, kinds = {}, {}
    for ch in sorted(aux_channels):
        if ch not in ds.schema.output_names:
            raise ValueError(f"auxiliary channel {ch!r} is not an output of the dataset")
        kind = CostKind.parse(aux_channels[ch])
        errors[ch] = eval_loss(LossSpec({ch: kind}, replications), model, theta, ds, seed)
        kinds[ch] = kind.value
    return ScientificReport(MappingProxyType(errors), MappingProxyType(kinds), different_scenarios)


@dataclass(frozen=True)
class WelchResult:
    t: float
    df: float
    p_value: float


def welch_t_test(a, b) -> WelchResult:
    """Two-sided Welch unequal-variance t-test."""
    a = np.asarray(a, dtype=float).reshape(-1)
    b = np.asarray(b, dtype=float).reshape(-1)
    if a.size < 2 or b.size < 2:
        raise ValueError("each sample needs at least two values")
    va, vb = a.var(ddof=1) / a.size, b.var(ddof=1) / b.size
    if not (va > 0 and vb > 0):
        raise ValueError("each sample needs positive variance")
    se2 = va + vb
    t = float((a.mean() - b.mean()) / math.sqrt(se2))
    df = float(se2 ** 2 / (va ** 2 / (a.size - 1) + vb ** 2 / (b.size - 1)))
    p = float(min(1.0, 2.0 * stats.t.sf(abs(t), df)))
    return WelchResult(t, df, p)
