"""Parsing and serialization of distribution, environment and run configs.

Distribution specs are tagged records:

    {"kind": "geometric", "p": 0.5}
    {"kind": "table", "pmf": [0.25, 0.5, 0.25]}
    {"kind": "poisson", "lambda": 1.0}
    {"kind": "binomial", "n": 2, "p": 0.5}

Environment specs wrap them:

    {"rule": "constant", "dist": {...}}
    {"rule": "periodic", "cycle": [{...}, {...}]}
    {"rule": "explicit", "head": [{...}], "tail": {...}}

Experiment config files are JSON documents with an "environment" field plus
any of: horizons, replicates, seed, s_grid, lambda_grid, tolerances,
mc_horizons, min_survivors, threads, chunk_size, node_budget, oracle_cap,
assume_critical, y_grid_size, kn_horizon, n.
"""

from __future__ import annotations

import json
from pathlib import Path

from .environment import Environment
from .experiments import ExperimentConfig, ExperimentError
from .offspring import (
    Binomial,
    DistributionError,
    FiniteTable,
    Geometric,
    OffspringDistribution,
    Poisson,
)

__all__ = [
    "ConfigError",
    "parse_dist",
    "dist_spec",
    "parse_environment",
    "environment_spec",
    "load_config_file",
    "build_experiment_config",
]


class ConfigError(ValueError):
    """Malformed configuration; carries the offending field name."""

    def __init__(self, field: str, message: str):
        super().__init__(f"config field '{field}': {message}")
        self.field = field


def _require(spec: dict, field: str, context: str):
    if field not in spec:
        raise ConfigError(f"{context}.{field}", "missing")
    return spec[field]


def parse_dist(spec: dict, context: str = "dist") -> OffspringDistribution:
    if not isinstance(spec, dict):
        raise ConfigError(context, "must be an object with a 'kind' tag")
    kind = _require(spec, "kind", context)
    try:
        if kind == "geometric":
            return Geometric(float(_require(spec, "p", context)))
        if kind == "table":
            return FiniteTable(_require(spec, "pmf", context))
        if kind == "poisson":
            return Poisson(float(_require(spec, "lambda", context)))
        if kind == "binomial":
            return Binomial(int(_require(spec, "n", context)), float(_require(spec, "p", context)))
    except (DistributionError, TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(context, str(exc)) from exc
    raise ConfigError(f"{context}.kind", f"unknown kind {kind!r}")


def dist_spec(d: OffspringDistribution) -> dict:
    if isinstance(d, Geometric):
        return {"kind": "geometric", "p": d.p}
    if isinstance(d, FiniteTable):
        return {"kind": "table", "pmf": d.probs.tolist()}
    if isinstance(d, Poisson):
        return {"kind": "poisson", "lambda": d.lam}
    if isinstance(d, Binomial):
        return {"kind": "binomial", "n": d.n, "p": d.p}
    raise TypeError(f"cannot serialize {type(d)!r}")


def parse_environment(spec: dict, context: str = "environment") -> Environment:
    if not isinstance(spec, dict):
        raise ConfigError(context, "must be an object with a 'rule' tag")
    rule = _require(spec, "rule", context)
    if rule == "constant":
        return Environment.constant(parse_dist(_require(spec, "dist", context), f"{context}.dist"))
    if rule == "periodic":
        cycle = _require(spec, "cycle", context)
        if not isinstance(cycle, list) or not cycle:
            raise ConfigError(f"{context}.cycle", "must be a nonempty list")
        return Environment.periodic(
            [parse_dist(d, f"{context}.cycle[{i}]") for i, d in enumerate(cycle)]
        )
    if rule == "explicit":
        head = _require(spec, "head", context)
        if not isinstance(head, list):
            raise ConfigError(f"{context}.head", "must be a list")
        return Environment.explicit(
            [parse_dist(d, f"{context}.head[{i}]") for i, d in enumerate(head)],
            parse_dist(_require(spec, "tail", context), f"{context}.tail"),
        )
    raise ConfigError(f"{context}.rule", f"unknown rule {rule!r}")


def environment_spec(env: Environment) -> dict:
    if env.rule == "constant":
        return {"rule": "constant", "dist": dist_spec(env.cycle[0])}
    if env.rule == "periodic":
        return {"rule": "periodic", "cycle": [dist_spec(d) for d in env.cycle]}
    if env.rule == "explicit":
        return {"rule": "explicit", "head": [dist_spec(d) for d in env.head],
                "tail": dist_spec(env.cycle[0])}
    return {"rule": "general", "head": [dist_spec(d) for d in env.head],
            "cycle": [dist_spec(d) for d in env.cycle]}


def load_config_file(path: str | Path) -> dict:
    p = Path(path)
    if not p.exists():
        raise ConfigError("config", f"file not found: {p}")
    try:
        doc = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError("config", f"invalid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("config", "top level must be an object")
    return doc


_CONFIG_FIELDS = {
    "horizons", "replicates", "seed", "s_grid", "lambda_grid", "tolerances",
    "mc_horizons", "min_survivors", "threads", "chunk_size", "node_budget",
    "oracle_cap", "assume_critical", "y_grid_size", "kn_horizon",
}


def build_experiment_config(doc: dict, **overrides) -> ExperimentConfig:
    """ExperimentConfig from a JSON document plus CLI flag overrides."""
    if "environment" not in doc:
        raise ConfigError("environment", "missing")
    env = parse_environment(doc["environment"])
    kwargs = {}
    for key, value in doc.items():
        if key in ("environment", "n"):
            continue
        if key not in _CONFIG_FIELDS:
            raise ConfigError(key, "unknown config field")
        kwargs[key] = value
    kwargs.update({k: v for k, v in overrides.items() if v is not None})
    kwargs.setdefault("horizons", [10, 100, 1000])
    if "tolerances" in kwargs and kwargs["tolerances"] is not None:
        if not isinstance(kwargs["tolerances"], dict):
            raise ConfigError("tolerances", "must be an object")
    try:
        return ExperimentConfig(environment=env, **kwargs)
    except ExperimentError as exc:
        raise ConfigError("experiment", str(exc)) from exc
    except TypeError as exc:
        raise ConfigError("experiment", str(exc)) from exc
