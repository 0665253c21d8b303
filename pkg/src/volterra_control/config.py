"""Experiment configuration: parsing, validation and canonical serialisation.

Schema (JSON)::

    {
      "task": "simulate | resolvent | demo | perturb | check | certify",
      "model": {ConsumptionModel fields except horizon},
      "grid": {"T": 1.0, "N": 32},
      "monte_carlo": {"n_paths": 10000, "base_seed": 0, "n_branches": 200},
      "options": {task-specific settings},
      "output": "out"
    }
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from typing import Any

from .model import B0_KINDS, GAMMA0_KINDS, SIGMA0_KINDS, ConsumptionModel
from .measure import THETA_KINDS

TASKS = ("simulate", "resolvent", "demo", "perturb", "check", "certify")


class ConfigError(ValueError):
    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


@dataclass(frozen=True)
class MonteCarloConfig:
    n_paths: int = 10_000
    base_seed: int = 0
    n_branches: int = 200


@dataclass(frozen=True)
class ExperimentConfig:
    task: str
    model: ConsumptionModel
    steps: int
    monte_carlo: MonteCarloConfig = MonteCarloConfig()
    options: dict = field(default_factory=dict)
    output: str = "out"

    @property
    def horizon(self) -> float:
        return self.model.horizon

    def to_dict(self) -> dict[str, Any]:
        model = self.model.to_dict()
        T = model.pop("horizon")
        return {
            "task": self.task,
            "model": model,
            "grid": {"T": T, "N": self.steps},
            "monte_carlo": {
                "n_paths": self.monte_carlo.n_paths,
                "base_seed": self.monte_carlo.base_seed,
                "n_branches": self.monte_carlo.n_branches,
            },
            "options": self.options,
            "output": self.output,
        }

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def digest(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return replace(self, monte_carlo=replace(self.monte_carlo, base_seed=seed))


def _need(d: dict, key: str, path: str):
    if key not in d:
        raise ConfigError(f"{path}.{key}" if path else key, "missing")
    return d[key]


def _number(value, name: str, *, positive=False, integer=False, nonneg=False):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(name, f"expected a number, got {value!r}")
    if integer and (not float(value).is_integer()):
        raise ConfigError(name, f"expected an integer, got {value!r}")
    if positive and value <= 0:
        raise ConfigError(name, f"must be positive, got {value!r}")
    if nonneg and value < 0:
        raise ConfigError(name, f"must be >= 0, got {value!r}")
    return int(value) if integer else float(value)


def _check_kernel(block: dict | None, kinds, name: str):
    if block is None:
        return
    if not isinstance(block, dict) or "id" not in block:
        raise ConfigError(name, "expected {\"id\": ..., \"params\": {...}}")
    if block["id"] not in kinds:
        raise ConfigError(f"{name}.id", f"unknown catalog id {block['id']!r}; expected one of {kinds}")
    for k, v in block.get("params", {}).items():
        _number(v, f"{name}.params.{k}")


def parse_config(raw: dict) -> ExperimentConfig:
    """Validate a decoded JSON object; errors name the offending field."""
    if not isinstance(raw, dict):
        raise ConfigError("<root>", "config must be a JSON object")
    task = _need(raw, "task", "")
    if task not in TASKS:
        raise ConfigError("task", f"unknown task {task!r}; expected one of {TASKS}")
    grid = _need(raw, "grid", "")
    T = _number(_need(grid, "T", "grid"), "grid.T", positive=True)
    N = _number(_need(grid, "N", "grid"), "grid.N", positive=True, integer=True)
    mc = raw.get("monte_carlo", {})
    n_paths = _number(mc.get("n_paths", 10_000), "monte_carlo.n_paths", positive=True, integer=True)
    if n_paths < 2:
        raise ConfigError("monte_carlo.n_paths", "need at least 2 paths for a standard error")
    seed = _number(mc.get("base_seed", 0), "monte_carlo.base_seed", nonneg=True, integer=True)
    branches = _number(mc.get("n_branches", 200), "monte_carlo.n_branches", positive=True, integer=True)
    model_raw = dict(raw.get("model", {}))
    if "horizon" in model_raw and float(model_raw["horizon"]) != T:
        raise ConfigError("model.horizon", "conflicts with grid.T; set the horizon in grid.T only")
    model_raw["horizon"] = T
    _check_kernel(model_raw.get("b0"), B0_KINDS, "model.b0")
    _check_kernel(model_raw.get("sigma0"), SIGMA0_KINDS, "model.sigma0")
    _check_kernel(model_raw.get("gamma0"), GAMMA0_KINDS, "model.gamma0")
    th = model_raw.get("theta")
    if th is not None and th.get("kind", "constant") not in THETA_KINDS:
        raise ConfigError("model.theta.kind", f"unknown theta kind {th.get('kind')!r}; expected one of {THETA_KINDS}")
    try:
        model = ConsumptionModel.from_dict(model_raw)
    except (ValueError, TypeError, KeyError) as exc:
        raise ConfigError("model", str(exc)) from None
    options = raw.get("options", {})
    if not isinstance(options, dict):
        raise ConfigError("options", "expected an object")
    output = raw.get("output", "out")
    if not isinstance(output, str) or not output:
        raise ConfigError("output", "expected a directory name")
    return ExperimentConfig(task, model, N, MonteCarloConfig(n_paths, seed, branches), options, output)


def load_config(path: str) -> ExperimentConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError("--config", f"cannot read {path}: {exc.strerror}") from None
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ConfigError("--config", f"{path} is not UTF-8 JSON: {exc}") from None
    return parse_config(raw)
