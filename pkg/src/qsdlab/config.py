"""Experiment configuration: a strict JSON schema.

Unknown keys are rejected everywhere so that a config file cannot silently
misspell a knob.  See ``qsdlab --help`` for the documented layout.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

from .models import build_preset

__all__ = ["ExperimentConfig", "ConfigError", "load_config"]

MODES = ("simulate", "oracle", "harris", "sweep")


class ConfigError(ValueError):
    """The config file is malformed or inconsistent."""


def _require_keys(section: dict, allowed: set, where: str) -> None:
    unknown = set(section) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) {sorted(unknown)} in {where}; "
                          f"allowed: {sorted(allowed)}")


@dataclass
class ExperimentConfig:
    """Validated experiment description."""

    mode: str
    model_name: str
    model_params: dict
    seed: int
    output_dir: Optional[str]
    fv: dict = field(default_factory=dict)
    oracle: dict = field(default_factory=dict)
    harris: dict = field(default_factory=dict)
    sweep: dict = field(default_factory=dict)
    metrics: list = field(default_factory=list)

    def preset(self):
        return build_preset(self.model_name, self.model_params)


_TOP_KEYS = {"mode", "model", "seed", "output_dir", "fv", "oracle", "harris",
             "sweep", "metrics"}
_MODEL_KEYS = {"name", "params"}
_FV_KEYS = {"n_particles", "gamma", "n_steps", "snapshot_stride",
            "max_resurrection_iters", "init"}
_ORACLE_KEYS = {"n_grid", "t0", "survival_steps", "conditional_iters"}
_HARRIS_KEYS = {"t0", "family", "q1_grid", "q2_grid", "k_fractions", "n_max"}
_SWEEP_KEYS = {"gammas", "n_particles", "horizons", "n_seeds", "burn_fraction",
               "snapshot_stride", "n_grid", "oracle_t0"}


def parse_config(doc: dict) -> ExperimentConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config root must be a JSON object")
    _require_keys(doc, _TOP_KEYS, "config root")
    mode = doc.get("mode")
    if mode not in MODES:
        raise ConfigError(f"mode must be one of {MODES}, got {mode!r}")
    model = doc.get("model")
    if not isinstance(model, dict):
        raise ConfigError("config needs a 'model' object")
    _require_keys(model, _MODEL_KEYS, "model")
    name = model.get("name")
    if not isinstance(name, str):
        raise ConfigError("model.name must be a string")
    params = model.get("params", {})
    if not isinstance(params, dict):
        raise ConfigError("model.params must be an object")
    seed = doc.get("seed", 0)
    if not isinstance(seed, int) or seed < 0:
        raise ConfigError("seed must be a nonnegative integer")

    fv = doc.get("fv", {})
    _require_keys(fv, _FV_KEYS, "fv")
    oracle = doc.get("oracle", {})
    _require_keys(oracle, _ORACLE_KEYS, "oracle")
    harris = doc.get("harris", {})
    _require_keys(harris, _HARRIS_KEYS, "harris")
    sweep = doc.get("sweep", {})
    _require_keys(sweep, _SWEEP_KEYS, "sweep")
    metrics = doc.get("metrics", [])
    if not isinstance(metrics, list):
        raise ConfigError("metrics must be a list of names")

    cfg = ExperimentConfig(mode=mode, model_name=name, model_params=params,
                           seed=seed, output_dir=doc.get("output_dir"),
                           fv=fv, oracle=oracle, harris=harris, sweep=sweep,
                           metrics=metrics)
    _validate_mode(cfg)
    try:
        cfg.preset()
    except KeyError as exc:
        raise ConfigError(str(exc)) from exc
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return cfg


def _validate_mode(cfg: ExperimentConfig) -> None:
    if cfg.mode == "simulate":
        for key in ("n_particles", "gamma", "n_steps"):
            if key not in cfg.fv:
                raise ConfigError(f"simulate mode requires fv.{key}")
        if cfg.fv["gamma"] <= 0:
            raise ConfigError("fv.gamma must be positive")
        if cfg.fv["n_particles"] < 1:
            raise ConfigError("fv.n_particles must be at least 1")
    if cfg.mode == "sweep":
        gammas = cfg.sweep.get("gammas", [])
        ns = cfg.sweep.get("n_particles", [])
        horizons = cfg.sweep.get("horizons", [])
        if not gammas or not ns or not horizons:
            raise ConfigError("sweep mode requires nonempty sweep.gammas, "
                              "sweep.n_particles and sweep.horizons")
        if any(g <= 0 for g in gammas):
            raise ConfigError("sweep.gammas must be positive")
        if any(n < 1 for n in ns):
            raise ConfigError("sweep.n_particles must be at least 1")
        if cfg.sweep.get("n_seeds", 1) < 1:
            raise ConfigError("sweep.n_seeds must be at least 1")


def load_config(path) -> ExperimentConfig:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    return parse_config(doc)
