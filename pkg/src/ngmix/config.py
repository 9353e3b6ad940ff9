"""JSON run configuration: schema validation and model assembly.

A single versioned document drives simulation and fitting: model
formulas (column lists for the fixed and random designs), one family
spec per stochastic component with its starting values, the operator,
estimator and Gibbs settings, switch thresholds, the process grid and
a seed.  Intercepts are always explicit — ``"1"`` in a formula list —
so the design the sub-sampler sees is exactly what was asked for.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .estimator import FitSettings
from .fem import OperatorSpec
from .mixtures import NvmSpec
from .model import ModelParams
from .tvswitch import SwitchRule

__all__ = ["SimulateDesign", "RunConfig", "config_from_dict", "load_config"]

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1

# §-of-support per component at the configuration surface
_NOISE_FAMILIES = ("normal", "nig", "t")
_RE_FAMILIES = ("normal", "nig")
_PROC_FAMILIES = ("normal", "nig", "gal", "cauchy")

_TOP_KEYS = {"schema_version", "model", "estimator", "gibbs", "switch",
             "grid", "simulate", "seed", "output"}
_MODEL_KEYS = {"fixed", "random", "beta", "noise", "random_effects", "process"}
_NOISE_KEYS = {"family", "nu", "sigma", "scope"}
_RE_KEYS = {"family", "nu", "mu", "Sigma"}
_PROC_KEYS = {"family", "nu", "mu", "operator"}
_OPERATOR_KEYS = {"kind", "kappa"}
_ESTIMATOR_KEYS = {"iters", "burn_in", "alpha0", "gamma", "n0", "strategy",
                   "M", "r", "s", "se_draws", "max_nodes"}
_GIBBS_KEYS = {"sweeps_per_step"}
_SWITCH_KEYS = {"to_gaussian_above", "to_cauchy_below"}
_GRID_KEYS = {"nodes", "max_nodes", "pad"}
_SIMULATE_KEYS = {"subjects", "obs_per_subject", "t_max", "schedule"}


@dataclass(frozen=True)
class SimulateDesign:
    """Synthetic-design recipe: balanced visit schedules on [0, t_max]."""

    subjects: int = 50
    obs_per_subject: int = 6
    t_max: float = 3.0
    schedule: str = "regular"

    def __post_init__(self):
        if self.subjects < 1 or int(self.subjects) != self.subjects:
            raise ConfigError(f"subjects must be a positive integer, got "
                              f"{self.subjects}")
        if self.obs_per_subject < 1 or int(self.obs_per_subject) != self.obs_per_subject:
            raise ConfigError(f"obs_per_subject must be a positive integer, "
                              f"got {self.obs_per_subject}")
        if not self.t_max > 0:
            raise ConfigError(f"t_max must be positive, got {self.t_max}")
        if self.schedule not in ("regular", "random"):
            raise ConfigError(f"schedule must be 'regular' or 'random', got "
                              f"{self.schedule!r}")
        object.__setattr__(self, "subjects", int(self.subjects))
        object.__setattr__(self, "obs_per_subject", int(self.obs_per_subject))


@dataclass(frozen=True)
class RunConfig:
    """Validated configuration: formulas, starting model, run settings."""

    fixed: tuple[str, ...]
    random: tuple[str, ...]
    params0: ModelParams
    settings: FitSettings
    grid_nodes: np.ndarray | None
    grid_max_nodes: int
    grid_pad: float
    simulate: SimulateDesign
    seed: int
    output: str | None

    @property
    def covariates(self) -> tuple[str, ...]:
        """Data columns the formulas reference beyond the intercept/time."""
        seen = []
        for name in (*self.fixed, *self.random):
            if name not in ("1", "time") and name not in seen:
                seen.append(name)
        return tuple(seen)


def _require_keys(section: dict, allowed: set, where: str) -> None:
    extra = set(section) - allowed
    if extra:
        raise ConfigError(
            f"unknown key(s) {sorted(extra)} in {where}; allowed: "
            f"{sorted(allowed)}"
        )


def _terms(value, where: str) -> tuple[str, ...]:
    if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
        raise ConfigError(f"{where} must be a list of column names")
    if len(set(value)) != len(value):
        raise ConfigError(f"{where} lists a column twice: {value}")
    return tuple(value)


def _spec_from(section: dict, allowed_families, where: str,
               mu=None) -> NvmSpec:
    family = section.get("family")
    if family not in allowed_families:
        raise ConfigError(
            f"{where} family must be one of {list(allowed_families)}, got "
            f"{family!r}"
        )
    if family in ("normal", "cauchy"):
        if section.get("nu") is not None:
            raise ConfigError(f"{where}: the {family} family takes no nu")
        return NvmSpec(family) if mu is None else NvmSpec(family, mu=mu)
    nu = section.get("nu")
    if nu is None:
        raise ConfigError(f"{where}: the {family} family needs nu")
    return (NvmSpec(family, nu=float(nu)) if mu is None
            else NvmSpec(family, nu=float(nu), mu=mu))


def config_from_dict(doc: dict) -> RunConfig:
    """Validate a parsed configuration document."""
    if not isinstance(doc, dict):
        raise ConfigError("configuration must be a JSON object")
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise ConfigError(
            f"schema_version must be {SCHEMA_VERSION}, got "
            f"{doc.get('schema_version')!r}"
        )
    _require_keys(doc, _TOP_KEYS, "the configuration")
    if "model" not in doc:
        raise ConfigError("configuration needs a 'model' section")
    model = doc["model"]
    _require_keys(model, _MODEL_KEYS, "model")

    fixed = _terms(model.get("fixed", []), "model.fixed")
    random = _terms(model.get("random", []), "model.random")
    if not fixed:
        raise ConfigError("model.fixed must list at least one term")

    noise = model.get("noise")
    if not isinstance(noise, dict):
        raise ConfigError("model.noise must be an object")
    _require_keys(noise, _NOISE_KEYS, "model.noise")
    noise_spec = _spec_from(noise, _NOISE_FAMILIES, "model.noise")
    sigma = float(noise.get("sigma", 1.0))
    scope = noise.get("scope", "per-observation")

    beta = np.asarray(model.get("beta", np.zeros(len(fixed))), dtype=float)
    if beta.shape != (len(fixed),):
        raise ConfigError(
            f"model.beta must have one entry per fixed term "
            f"({len(fixed)}), got shape {beta.shape}"
        )

    re_section = model.get("random_effects")
    re_spec = Sigma = None
    if random and re_section is None:
        raise ConfigError("model.random is non-empty but model.random_effects "
                          "is missing")
    if re_section is not None:
        if not random:
            raise ConfigError("model.random_effects given but model.random "
                              "is empty")
        _require_keys(re_section, _RE_KEYS, "model.random_effects")
        q = len(random)
        mu = np.asarray(re_section.get("mu", np.zeros(q)), dtype=float)
        re_spec = _spec_from(re_section, _RE_FAMILIES, "model.random_effects",
                             mu=mu)
        Sigma = np.asarray(re_section.get("Sigma", 0.5 * np.eye(q)),
                           dtype=float)
        if Sigma.shape != (q, q):
            raise ConfigError(
                f"model.random_effects.Sigma must be {q}x{q} for "
                f"{q} random term(s), got shape {Sigma.shape}"
            )

    proc_section = model.get("process")
    proc_spec = operator = None
    if proc_section is not None:
        _require_keys(proc_section, _PROC_KEYS, "model.process")
        proc_spec = _spec_from(proc_section, _PROC_FAMILIES, "model.process",
                               mu=float(proc_section.get("mu", 0.0)))
        op = proc_section.get("operator")
        if not isinstance(op, dict):
            raise ConfigError("model.process needs an 'operator' object")
        _require_keys(op, _OPERATOR_KEYS, "model.process.operator")
        operator = OperatorSpec(op.get("kind", "exponential"),
                                float(op.get("kappa", 1.0)))

    params0 = ModelParams(beta=beta, sigma=sigma, noise_spec=noise_spec,
                          Sigma=Sigma, re_spec=re_spec, proc_spec=proc_spec,
                          operator=operator, noise_scope=scope)

    est = doc.get("estimator", {})
    _require_keys(est, _ESTIMATOR_KEYS, "estimator")
    gibbs = doc.get("gibbs", {})
    _require_keys(gibbs, _GIBBS_KEYS, "gibbs")
    switch = doc.get("switch", {})
    _require_keys(switch, _SWITCH_KEYS, "switch")
    rule = SwitchRule(**switch)
    seed = int(doc.get("seed", 0))
    settings = FitSettings(seed=seed, switch_rule=rule,
                           sweeps=int(gibbs.get("sweeps_per_step", 5)),
                           **{k: est[k] for k in est})

    grid = doc.get("grid", {})
    _require_keys(grid, _GRID_KEYS, "grid")
    nodes = grid.get("nodes")
    if nodes is not None:
        nodes = np.asarray(nodes, dtype=float)
        if nodes.ndim != 1 or nodes.size < 2 or np.any(np.diff(nodes) <= 0):
            raise ConfigError("grid.nodes must be a strictly increasing "
                              "vector with at least two entries")
    max_nodes = int(grid.get("max_nodes", settings.max_nodes))
    pad = float(grid.get("pad", 0.05))

    sim = doc.get("simulate", {})
    _require_keys(sim, _SIMULATE_KEYS, "simulate")

    output = doc.get("output")
    if output is not None and not isinstance(output, str):
        raise ConfigError("output must be a path string")

    return RunConfig(
        fixed=fixed, random=random, params0=params0, settings=settings,
        grid_nodes=nodes, grid_max_nodes=max_nodes, grid_pad=pad,
        simulate=SimulateDesign(**sim), seed=seed, output=output,
    )


def load_config(path) -> RunConfig:
    """Read and validate a JSON configuration file."""
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    cfg = config_from_dict(doc)
    logger.info("loaded configuration from %s", path)
    return cfg
