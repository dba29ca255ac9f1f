"""Command-line front end: ``simcal <command> --config run.yaml --out DIR``.

Exit codes: 0 success, 1 configuration or usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import time
from pathlib import Path
from typing import Any, Literal, Optional

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from . import __version__
from .bayes import (HierarchicalModel, LogPosterior, Prior, PriorComponent, chain_diagnostics,
                    hierarchical_sample, map_estimate, posterior_summary, rw_metropolis)
from .bench import (SCENARIOS, Pipeline, SyntheticDGP, ensemble_compare, estimator_mse, loss_landscape,
                    oat_sensitivity, recover, synthesize, variance_decomposition)
from .core import Dataset, Schema, SeedStream, SplitSpec, load_dataset, split_dataset
from .cost import LossSpec
from .model import Model, model_predict
from .optimize import FAMILIES, OptimizerConfig, calibrate
from .simulators import SIMULATORS, get_simulator
from .space import ParameterSpace
from .validate import cross_validate, diagnose_bias_variance, error_on, scientific_validate

COMMANDS = ("calibrate", "validate", "bayes", "bench", "simulate")
SUBTASKS = ("recover", "mse", "vardecomp", "oat", "landscape", "ensemble")
REQUIRED = {
    "calibrate": {"dataset", "model", "loss", "optimizer"},
    "validate": {"dataset", "model", "loss", "validation"},
    "bayes": {"dataset", "model", "bayes"},
    "bench": {"model", "bench"},
    "simulate": {"model", "simulate"},
}
OPTIONAL = {
    "calibrate": {"validation"},
    "validate": {"optimizer"},
    "bayes": set(),
    "bench": {"loss", "optimizer"},
    "simulate": set(),
}
SECTIONS = ("dataset", "model", "loss", "optimizer", "validation", "bayes", "bench", "simulate")


class ConfigError(Exception):
    pass


# -- configuration schema -----------------------------------------------------

class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", populate_by_name=True)


class ChannelCfg(_Strict):
    name: str
    arity: Optional[int] = 1
    unit: str = ""


class SchemaCfg(_Strict):
    inputs: list[str | ChannelCfg]
    outputs: list[str | ChannelCfg]
    format: Literal["wide", "long"] = "wide"


class SplitCfg(_Strict):
    fractions: tuple[float, float, float] = (1.0, 0.0, 0.0)
    mode: Literal["random", "contiguous"] = "random"


class DatasetCfg(_Strict):
    path: Optional[str] = None
    units: Optional[list[str]] = None
    channels: SchemaCfg = Field(alias="schema")
    split: SplitCfg = SplitCfg()


class BoundCfg(_Strict):
    lower: float
    upper: float


class ModelCfg(_Strict):
    simulator: str
    options: dict[str, int] = {}
    parameters: dict[str, BoundCfg]
    discrete: dict[str, list[float]] = {}
    frozen: dict[str, float] = {}
    noise: dict[str, str | float] = {}

    @field_validator("simulator")
    @classmethod
    def _known(cls, v):
        if v not in SIMULATORS:
            raise ValueError(f"unknown simulator {v!r}; choose from {sorted(SIMULATORS)}")
        return v


class ChannelLossCfg(_Strict):
    cost: str
    weight: float = 1.0


class LossCfg(_Strict):
    channels: dict[str, ChannelLossCfg]
    replications: int = 1
    lam: float = 0.0
    regularizer: Literal["zero", "squared_distance"] = "zero"
    reference: Optional[dict[str, float]] = None


class OptimizerCfg(_Strict):
    family: Literal["grid", "nelder_mead", "genetic", "spsa"]
    hyper: dict[str, Any] = {}
    budget: int = 10_000
    starts: int = 1
    init: Optional[dict[str, float]] = None


class ValidationCfg(_Strict):
    eps_th: float
    ratio_big: float = 2.0
    tol: float = 0.25
    k: Optional[int] = None
    aux_channels: dict[str, str] = {}


class PriorCfg(_Strict):
    kind: Literal["uniform", "normal", "lognormal"] = "uniform"
    m: float = 0.0
    s: float = 1.0


class HierarchicalCfg(_Strict):
    fixed: dict[str, float] = {}
    psi_bounds: dict[str, BoundCfg] = {}
    hyperpriors: dict[str, PriorCfg] = {}
    psi_scales: Optional[dict[str, float]] = None


class BayesCfg(_Strict):
    mode: Literal["mcmc", "map", "both", "hierarchical"] = "mcmc"
    priors: dict[str, PriorCfg] = {}
    iterations: int = 20_000
    burn_in: int = 2_000
    thin: int = 1
    scales: Optional[dict[str, float]] = None
    init: Optional[dict[str, float]] = None
    alpha: float = 0.05
    region: Optional[dict[str, tuple[float, float]]] = None
    optimizer: Optional[OptimizerCfg] = None
    hierarchical: Optional[HierarchicalCfg] = None


class ScenarioCfg(_Strict):
    kind: str
    options: dict[str, float] = {}

    @field_validator("kind")
    @classmethod
    def _known(cls, v):
        if v not in SCENARIOS:
            raise ValueError(f"unknown scenario {v!r}; choose from {sorted(SCENARIOS)}")
        return v


class OATCfg(_Strict):
    channel: str
    levels: int = 5


class LandscapeCfg(_Strict):
    components: tuple[str, str]
    resolution: int = 21


class CandidateCfg(_Strict):
    name: str
    model: ModelCfg


class BenchCfg(_Strict):
    theta_true: dict[str, float]
    scenario: ScenarioCfg
    n: int = 50
    repetitions: int = 20
    data_draws: int = 10
    optimizer_seeds: int = 10
    oat: Optional[OATCfg] = None
    landscape: Optional[LandscapeCfg] = None
    candidates: list[CandidateCfg] = []


class SimulateCfg(_Strict):
    theta: dict[str, float]
    inputs: Optional[dict[str, list[float]]] = None
    scenario: Optional[ScenarioCfg] = None
    replications: int = 1


class RunConfig(_Strict):
    seed: int = Field(0, ge=0, le=2 ** 64 - 1)
    dataset: Optional[DatasetCfg] = None
    model: Optional[ModelCfg] = None
    loss: Optional[LossCfg] = None
    optimizer: Optional[OptimizerCfg] = None
    validation: Optional[ValidationCfg] = None
    bayes: Optional[BayesCfg] = None
    bench: Optional[BenchCfg] = None
    simulate: Optional[SimulateCfg] = None


def _format_validation_error(exc: ValidationError) -> str:
    lines = []
    for err in exc.errors():
        loc = ".".join(str(p) for p in err["loc"] if not str(p).startswith(("function-", "str", "ChannelCfg")))
        msg = err["msg"]
        if err["type"] == "extra_forbidden":
            msg = "unknown key"
        lines.append(f"{loc}: {msg}")
    return "; ".join(lines)


def load_config(path: str | Path, seed: int | None = None) -> tuple[RunConfig, Path]:
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"config is not valid YAML: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping of sections")
    if seed is not None:
        raw["seed"] = seed
    try:
        cfg = RunConfig.model_validate(raw)
    except ValidationError as exc:
        raise ConfigError(_format_validation_error(exc)) from None
    return cfg, path.resolve().parent


def check_sections(cfg: RunConfig, command: str) -> None:
    present = {s for s in SECTIONS if getattr(cfg, s) is not None}
    for s in sorted(REQUIRED[command] - present):
        raise ConfigError(f"{command} needs the {s!r} section")
    extra = present - REQUIRED[command] - OPTIONAL[command]
    if extra:
        raise ConfigError(f"sections not used by {command}: {sorted(extra)}")


# -- builders (errors here are configuration errors) ------------------------

def build_model(m: ModelCfg) -> Model:
    space = ParameterSpace(tuple((n, b.lower, b.upper) for n, b in m.parameters.items()),
                           tuple((n, tuple(v)) for n, v in m.discrete.items()))
    return Model(get_simulator(m.simulator, **m.options), space, m.frozen, m.noise)


def build_loss(lc: LossCfg) -> LossSpec:
    return LossSpec({ch: (c.cost, c.weight) for ch, c in lc.channels.items()}, lc.replications, lc.lam,
                    lc.regularizer, lc.reference)


def build_optimizer(oc: OptimizerCfg, seed: SeedStream) -> OptimizerConfig:
    return OptimizerConfig(oc.family, dict(oc.hyper), seed, oc.budget)


def build_schema(sc: SchemaCfg) -> Schema:
    return Schema.from_dict({
        "inputs": [c if isinstance(c, str) else c.model_dump() for c in sc.inputs],
        "outputs": [c if isinstance(c, str) else c.model_dump() for c in sc.outputs],
        "format": sc.format,
    })


def load_data(dc: DatasetCfg, base: Path) -> Dataset:
    if dc.path is None:
        raise ConfigError("dataset.path is required")
    return load_dataset(base / dc.path, build_schema(dc.channels))


def load_units(dc: DatasetCfg, base: Path) -> list[Dataset]:
    if not dc.units:
        raise ConfigError("hierarchical mode needs dataset.units (one file per unit)")
    schema = build_schema(dc.channels)
    return [load_dataset(base / p, schema) for p in dc.units]


def build_splits(cfg: RunConfig, ds: Dataset):
    sc = cfg.dataset.split
    return split_dataset(ds, SplitSpec(sc.fractions, sc.mode, cfg.seed))


def build_scenario(sc: ScenarioCfg):
    opts = dict(sc.options)
    if sc.kind == "gaussian_features" and "n_features" in opts:
        opts["n_features"] = int(opts["n_features"])
    return SCENARIOS[sc.kind](**opts)


# -- output helpers -----------------------------------------------------------

def _clean(obj):
    """JSON-ready copy: numpy scalars and arrays become Python values, non-finite floats ``null``."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(_clean(obj), indent=2, allow_nan=False) + "\n", encoding="utf-8")


def write_csv(path: Path, header, rows) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


def _header(command: str, cfg: RunConfig) -> dict:
    return {"command": command, "version": __version__, "seed": cfg.seed}


def _split_sizes(parts) -> dict:
    return {"train": len(parts[0]), "val": len(parts[1]), "test": len(parts[2])}


# -- commands -----------------------------------------------------------------

def cmd_calibrate(cfg: RunConfig, base: Path, out: Path, threads: int) -> dict:
    model = build_model(cfg.model)
    spec = build_loss(cfg.loss)
    master = SeedStream(cfg.seed)
    config = build_optimizer(cfg.optimizer, master.derive("optimizer"))
    init = None if cfg.optimizer.init is None else model.space.as_array(cfg.optimizer.init)
    parts = build_splits(cfg, load_data(cfg.dataset, base))
    if len(parts[0]) == 0:
        raise ConfigError("dataset.split leaves the training part empty")

    def run():
        best, report = calibrate(model, spec, parts[0], config, init, cfg.optimizer.starts,
                                 master.derive("calibrate"), threads)
        write_csv(out / "trace.csv", ("evaluation_index", "incumbent_loss"), best.trace)
        return {
            **_header("calibrate", cfg),
            "split": _split_sizes(parts),
            "theta_hat": best.theta_hat.as_dict(),
            "loss_hat": best.loss_hat,
            "evaluations": best.evaluations,
            "converged": best.converged,
            "reason": best.reason,
            "constraint_residuals": dict(best.constraint_residuals),
            "multi_start": {
                "losses": list(report.losses),
                "theta_sd": dict(zip(model.space.names, report.theta_sd)),
                "failures": [{"start": s, "error": e} for s, e in report.failures],
            },
        }
    return run


def _read_theta(artifact: Path | None, model: Model) -> np.ndarray:
    if artifact is None:
        raise ConfigError("validate needs --artifact pointing at a calibrate output")
    path = artifact / "result.json" if artifact.is_dir() else artifact
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
        return model.space.check(doc["theta_hat"])
    except FileNotFoundError:
        raise ConfigError(f"artifact not found: {path}") from None
    except (KeyError, json.JSONDecodeError):
        raise ConfigError(f"artifact {path} has no theta_hat") from None


def cmd_validate(cfg: RunConfig, base: Path, out: Path, threads: int, artifact: Path | None = None):
    model = build_model(cfg.model)
    spec = build_loss(cfg.loss)
    vc = cfg.validation
    if not vc.eps_th > 0:
        raise ConfigError("validation.eps_th must be positive")
    theta = _read_theta(artifact, model)
    master = SeedStream(cfg.seed)
    ds = load_data(cfg.dataset, base)
    tr, val, te = build_splits(cfg, ds)
    if len(tr) == 0 or len(val) == 0:
        raise ConfigError("dataset.split must give non-empty train and val parts for validation")
    pool = tr.concat(val)
    if vc.k is not None:
        if cfg.optimizer is None:
            raise ConfigError("validation.k needs the 'optimizer' section")
        if not 2 <= vc.k <= len(pool):
            raise ConfigError(f"validation.k must satisfy 2 <= k <= {len(pool)} (train + val points), got {vc.k}")
        cv_config = build_optimizer(cfg.optimizer, master.derive("optimizer"))
    if vc.aux_channels:
        overlap = sorted(set(vc.aux_channels) & set(spec.channels))
        if overlap:
            raise ConfigError(f"validation.aux_channels overlap the loss channels: {overlap}")

    def run():
        seed = master.derive("validate")
        eps_tr = error_on(tr, model, theta, spec, seed.derive("train"))
        eps_val = error_on(val, model, theta, spec, seed.derive("val"))
        eps_te = error_on(te, model, theta, spec, seed.derive("test")) if len(te) else None
        report = diagnose_bias_variance(eps_tr, eps_val, vc.eps_th, vc.ratio_big, vc.tol, eps_te)
        doc = {**_header("validate", cfg), "split": _split_sizes((tr, val, te)),
               "theta": model.space.vector(theta).as_dict(), "diagnostics": report.as_dict()}
        if vc.k is not None:
            init = None if cfg.optimizer.init is None else model.space.as_array(cfg.optimizer.init)
            cv = cross_validate(model, spec, pool, vc.k, cv_config, master.derive("cv"), cfg.optimizer.starts,
                                init, threads)
            write_csv(out / "folds.csv", ("fold", "size", "error"),
                      [(f, s, e) for f, (s, e) in enumerate(zip(cv.fold_sizes, cv.fold_errors))])
            doc["cross_validation"] = {"k": vc.k, "cv_error": cv.cv_error, "fold_errors": list(cv.fold_errors),
                                       "fold_sd": cv.fold_sd}
        if vc.aux_channels:
            sci = scientific_validate(model, theta, ds, vc.aux_channels, tuple(spec.channels),
                                      seed.derive("scientific"), spec.replications)
            doc["scientific"] = sci.as_dict()
        return doc
    return run


def _prior(model: Model, bc: BayesCfg) -> Prior:
    return Prior.from_space(model.space, {n: (p.kind, p.m, p.s) for n, p in bc.priors.items()})


def _scales(space: ParameterSpace, given: dict[str, float] | None):
    if given is None:
        return None
    unknown = set(given) - set(space.names)
    if unknown:
        raise ConfigError(f"proposal scales given for unknown parameters: {sorted(unknown)}")
    return np.array([given.get(n, 0.05 * w) for n, w in zip(space.names, space.width)])


def _samples_rows(post):
    for j, (row, ld) in enumerate(zip(post.samples, post.log_density)):
        yield (post.burn_in + j * post.thin, *row.tolist(), float(ld))


def cmd_bayes(cfg: RunConfig, base: Path, out: Path, threads: int):
    bc = cfg.bayes
    model = build_model(cfg.model)
    master = SeedStream(cfg.seed)
    if model.simulator.stochastic:
        raise ConfigError(f"simulator {model.simulator.name!r} is stochastic: its likelihood is not accessible, "
                          "so bayes mode is unavailable (likelihood-free methods are not provided)")
    if bc.mode == "hierarchical":
        return _cmd_hierarchical(cfg, base, out, threads, model, master)
    prior = _prior(model, bc)
    ds = build_splits(cfg, load_data(cfg.dataset, base))[0]
    target = LogPosterior(model, prior, ds)
    init = model.space.midpoint if bc.init is None else model.space.check(bc.init)
    scales = _scales(model.space, bc.scales)
    if bc.mode in ("mcmc", "both") and not bc.iterations > bc.burn_in >= 0:
        raise ConfigError("bayes.iterations must exceed bayes.burn_in")
    opt_cfg = build_optimizer(bc.optimizer or OptimizerCfg(family="nelder_mead"), master.derive("map"))

    def run():
        doc = {**_header("bayes", cfg), "mode": bc.mode, "n_points": len(ds)}
        if bc.mode in ("map", "both"):
            res = map_estimate(model, prior, ds, opt_cfg, init, 1, master.derive("map"))
            doc["map"] = {"theta": res.theta_hat.as_dict(), "neg_log_posterior": res.loss_hat,
                          "evaluations": res.evaluations, "converged": res.converged}
        if bc.mode in ("mcmc", "both"):
            post = rw_metropolis(target, model.space, init, bc.iterations, bc.burn_in, bc.thin, scales,
                                 master.derive("mcmc"))
            write_csv(out / "samples.csv", ("iteration", *post.names, "log_density"), _samples_rows(post))
            doc["mcmc"] = {"samples": len(post), "acceptance_rate": post.acceptance_rate,
                           "summary": posterior_summary(post, bc.alpha, bc.region).as_dict(),
                           "diagnostics": chain_diagnostics(post).as_dict() if len(post) >= 100 else None}
        return doc
    return run


def _cmd_hierarchical(cfg, base, out, threads, model, master):
    bc, hc = cfg.bayes, cfg.bayes.hierarchical or HierarchicalCfg()
    units = load_units(cfg.dataset, base)
    psi_space = None
    if hc.psi_bounds:
        psi_space = ParameterSpace(tuple((n, b.lower, b.upper) for n, b in hc.psi_bounds.items()))
    hyper = None
    if psi_space is not None:
        hyper = Prior.from_space(psi_space, {n: (p.kind, p.m, p.s) for n, p in hc.hyperpriors.items()})
    elif hc.hyperpriors:
        raise ConfigError("bayes.hierarchical.hyperpriors given but no psi_bounds")
    hm = HierarchicalModel(model, units, psi_space, hyper, hc.fixed)
    if not bc.iterations > bc.burn_in >= 0:
        raise ConfigError("bayes.iterations must exceed bayes.burn_in")
    scales = _scales(model.space, bc.scales)
    psi_scales = None if psi_space is None else _scales(psi_space, hc.psi_scales)

    def run():
        post = hierarchical_sample(hm, bc.iterations, bc.burn_in, bc.thin, master.derive("hierarchical"),
                                   scales, psi_scales, n_jobs=threads)
        write_csv(out / "samples.csv", ("iteration", *post.names, "log_density"), _samples_rows(post))
        return {**_header("bayes", cfg), "mode": "hierarchical", "units": [len(u) for u in units],
                "samples": len(post), "acceptance_rate": post.acceptance_rate,
                "unit_acceptance": list(post.info["unit_acceptance"]),
                "psi_acceptance": post.info.get("psi_acceptance"),
                "summary": posterior_summary(post, bc.alpha).as_dict(),
                "diagnostics": chain_diagnostics(post).as_dict() if len(post) >= 100 else None}
    return run


def cmd_bench(cfg: RunConfig, base: Path, out: Path, threads: int, subtask: str | None = None):
    if subtask not in SUBTASKS:
        raise ConfigError(f"unknown bench subtask {subtask!r}; valid subtasks: {', '.join(SUBTASKS)}")
    bc = cfg.bench
    model = build_model(cfg.model)
    dgp = SyntheticDGP(model, bc.theta_true, build_scenario(bc.scenario), "bench")
    master = SeedStream(cfg.seed).derive("bench")
    doc = {**_header("bench", cfg), "subtask": subtask}
    if subtask == "oat":
        if bc.oat is None:
            raise ConfigError("bench oat needs the 'bench.oat' section")
        x = dgp.scenario(master.derive("scenario").rng(), 0)

        def run_oat():
            return {**doc, "oat": oat_sensitivity(model, x, bc.oat.levels, bc.oat.channel, master).as_dict()}
        return run_oat
    for s in ("loss", "optimizer"):
        if getattr(cfg, s) is None:
            raise ConfigError(f"bench {subtask} needs the {s!r} section")
    spec = build_loss(cfg.loss)
    pipe = Pipeline(spec, build_optimizer(cfg.optimizer, master.derive("optimizer")), cfg.optimizer.starts,
                    cfg.optimizer.init, threads if subtask in ("recover",) else 1)
    if subtask == "landscape" and bc.landscape is None:
        raise ConfigError("bench landscape needs the 'bench.landscape' section")
    candidates = [(c.name, build_model(c.model), pipe) for c in bc.candidates] or [("model", model, pipe)]

    def run():
        if subtask == "recover":
            rep = recover(dgp, bc.n, pipe, master)
            return {**doc, "n": bc.n, "recovery": rep.as_dict()}
        if subtask == "mse":
            rep = estimator_mse(dgp, bc.n, pipe.estimator(model), bc.repetitions, master, threads)
            return {**doc, "n": bc.n, "mse": rep.as_dict(), "identity_gap": float(np.max(rep.identity_gap))}
        if subtask == "vardecomp":
            rep = variance_decomposition(dgp, bc.n, pipe.estimator(model), bc.data_draws, bc.optimizer_seeds,
                                         master, threads)
            return {**doc, "n": bc.n, "variance_decomposition": rep.as_dict()}
        ds = synthesize(dgp, bc.n, master.derive("data"))
        if subtask == "landscape":
            land = loss_landscape(spec, model, ds, bc.landscape.components, bc.landscape.resolution,
                                  master.derive("loss"), dgp.theta_true, threads)
            write_csv(out / "landscape.csv", (*land.names, "loss"),
                      [(a, b, land.values[i, j]) for i, a in enumerate(land.axis_0)
                       for j, b in enumerate(land.axis_1)])
            return {**doc, "n": bc.n, "landscape": {"components": list(land.names), "minimum": land.minimum,
                                                    "argmin": list(land.argmin()), "flat": land.flat,
                                                    "near_min_fraction": land.near_min_fraction}}
        rows = ensemble_compare(candidates, ds, master.derive("ensemble"), threads)
        return {**doc, "n": bc.n, "ensemble": [{"name": r.name, "loss_hat": r.loss_hat, "theta_hat": r.theta_hat,
                                                "error": r.error} for r in rows]}
    return run


def cmd_simulate(cfg: RunConfig, base: Path, out: Path, threads: int):
    sc = cfg.simulate
    model = build_model(cfg.model)
    theta = model.space.check(sc.theta)
    if (sc.inputs is None) == (sc.scenario is None):
        raise ConfigError("simulate needs exactly one of 'simulate.inputs' or 'simulate.scenario'")
    if sc.replications < 1:
        raise ConfigError("simulate.replications must be >= 1")
    master = SeedStream(cfg.seed).derive("simulate")
    if sc.inputs is not None:
        x = {k: np.asarray(v, float) for k, v in sc.inputs.items()}
    else:
        x = build_scenario(sc.scenario)(master.derive("scenario").rng(), 0)
    missing = set(model.simulator.inputs) - set(x)
    if missing:
        raise ConfigError(f"simulate inputs lack channels {sorted(missing)}")

    def run():
        records = model_predict(model, x, theta, sc.replications, master.derive("predict"))
        rows = [(r, ch, i, float(v)) for r, rec in enumerate(records) for ch in sorted(rec)
                for i, v in enumerate(np.asarray(rec[ch]).reshape(-1))]
        write_csv(out / "outputs.csv", ("replication", "channel", "index", "value"), rows)
        return {**_header("simulate", cfg), "theta": model.space.vector(theta).as_dict(),
                "replications": [{ch: rec[ch] for ch in sorted(rec)} for rec in records]}
    return run


HANDLERS = {"calibrate": cmd_calibrate, "validate": cmd_validate, "bayes": cmd_bayes, "bench": cmd_bench,
            "simulate": cmd_simulate}


# -- entry point ----------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def make_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="simcal", description="Calibrate, validate and benchmark simulators.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("subtask", nargs="?", help=f"bench subtask: {', '.join(SUBTASKS)}")
    p.add_argument("--config", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--seed", type=int, default=None, help="overrides the config's master seed")
    p.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    p.add_argument("--artifact", type=Path, default=None, help="calibrate output (validate only)")
    return p


def _resolved(cfg: RunConfig, base: Path) -> dict:
    doc = cfg.model_dump(by_alias=True, exclude_none=True, mode="json")
    if "dataset" in doc:
        ds = doc["dataset"]
        if "path" in ds:
            ds["path"] = str((base / ds["path"]).resolve())
        if "units" in ds:
            ds["units"] = [str((base / u).resolve()) for u in ds["units"]]
    return doc


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    if args.command != "bench" and args.subtask is not None:
        print(f"simcal: error: {args.command} takes no subtask", file=sys.stderr)
        return 1
    if args.threads < 1:
        print("simcal: error: --threads must be >= 1", file=sys.stderr)
        return 1
    started = time.perf_counter()
    try:
        cfg, base = load_config(args.config, args.seed)
        check_sections(cfg, args.command)
        extra = {"subtask": args.subtask} if args.command == "bench" else {}
        if args.command == "validate":
            extra = {"artifact": args.artifact}
        args.out.mkdir(parents=True, exist_ok=True)
        run = HANDLERS[args.command](cfg, base, args.out, args.threads, **extra)
    except (ConfigError, ValueError, KeyError, TypeError, OSError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"simcal: configuration error: {msg}", file=sys.stderr)
        return 1
    built = time.perf_counter()
    try:
        doc = run()
    except Exception as exc:  # runtime failure of a module operation
        print(f"simcal: runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    finished = time.perf_counter()
    write_json(args.out / "result.json", doc)
    (args.out / "resolved_config.yaml").write_text(
        yaml.safe_dump(_resolved(cfg, base), sort_keys=False), encoding="utf-8")
    write_json(args.out / "timing.json", {"setup_seconds": built - started, "run_seconds": finished - built,
                                          "threads": args.threads})
    return 0


if __name__ == "__main__":
    sys.exit(main())
