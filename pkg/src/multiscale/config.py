"""Versioned experiment configuration: defaults per experiment kind, strict merging of
user overrides (unknown keys and wrong types are rejected) and YAML I/O."""
from __future__ import annotations

import copy
from dataclasses import fields
from pathlib import Path
from typing import Any, Union

import yaml

from .environments import ConvEnvSpec, RankEnvSpec, ToyEnvSpec

SCHEMA_VERSION = 1
KINDS = ("toy", "conversational", "ranking")


class ConfigError(ValueError):
    """Invalid configuration; the CLI maps it to exit status 2."""


def _level(n_samples=1000, hidden_dims=(64, 64), beta=1.0, learning_rate=1e-3, epochs=200, batch_size=256, weight_decay=0.0):
    return {
        "n_samples": n_samples,
        "hidden_dims": list(hidden_dims),
        "beta": beta,
        "learning_rate": learning_rate,
        "weight_decay": weight_decay,
        "batch_size": batch_size,
        "epochs": epochs,
    }


def _env_params(spec_cls) -> dict:
    out = {}
    for f in fields(spec_cls):
        v = getattr(spec_cls(), f.name)
        out[f.name] = _plain(v)
    return out


def _plain(v):
    if isinstance(v, tuple):
        return [_plain(x) for x in v]
    if hasattr(v, "item"):
        return v.item()
    return v


DEFAULTS = {
    "toy": {
        "version": SCHEMA_VERSION,
        "experiment": "toy-rl",
        "seeds": [1, 2, 3, 4, 5],
        "output": None,
        "environment": {"kind": "toy", "params": _env_params(ToyEnvSpec)},
        "sweep": {"k": [2, 4, 6]},
        "training": {
            "levels": [_level(0), _level(0, (16,), 1.0, 0.01, 300, 1024)],
            "sample_grid": [2, 4, 6, 8, 10, 12, 16, 20, 24, 32, 40, 48, 64, 80, 96, 128, 160, 192, 256, 320, 384, 512, 640, 768, 1024],
        },
        "q_learning": {
            "episodes": 60000,
            "alpha": 0.1,
            "gamma": 1.0,
            "epsilon_start": 0.1,
            "epsilon_end": 0.01,
            "q_init": 1.0,
            "checkpoint": 100,
            "reward_delivery": "per_step",
        },
        "evaluation": {"target": None},
        "baselines": ["qlearning", "uniform", "skyline"],
    },
    "conversational": {
        "version": SCHEMA_VERSION,
        "experiment": "conv",
        "seeds": [1, 2, 3, 4, 5],
        "output": None,
        "environment": {"kind": "conversational", "params": _env_params(ConvEnvSpec)},
        "sweep": {"sigma_f": [0.05, 0.1, 0.2, 0.3, 0.4, 0.5]},
        "training": {"levels": [_level(3000, beta=1.0), _level(1500, beta=0.8), _level(1500, beta=0.8)]},
        "evaluation": {"episodes": 300, "skyline_budget": 1000},
        "baselines": ["two_level", "l1_only", "random", "skyline", "fixed"],
    },
    "ranking": {
        "version": SCHEMA_VERSION,
        "experiment": "ranking",
        "seeds": [1, 2, 3, 4, 5],
        "output": None,
        "environment": {"kind": "ranking", "params": _env_params(RankEnvSpec)},
        "sweep": {
            "groups": [2, 3, 4, 5],
            "k": [5, 10, 20, 40],
            "sigma_s": [0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0, 2.0],
        },
        "training": {"levels": [_level(0), _level(1500, beta=0.8, epochs=100)]},
        "evaluation": {"episodes": 300, "skyline_budget": 1000},
        "baselines": ["random", "fixed", "no_boost", "skyline"],
    },
}

BASELINES = {
    "toy": {"qlearning", "uniform", "skyline"},
    "conversational": {"two_level", "l1_only", "random", "skyline", "fixed"},
    "ranking": {"random", "fixed", "no_boost", "skyline"},
}
# keys whose default is None but accept a value of this type
NULLABLE = {"output": str, "target": float}


def _typecheck(path: str, default: Any, value: Any) -> Any:
    if default is None:
        key = path.rsplit(".", 1)[-1]
        want = NULLABLE.get(key)
        if value is None or want is None:
            return value
        if want is float and isinstance(value, (int, float)) and not isinstance(value, bool):
            return float(value)
        if not isinstance(value, want):
            raise ConfigError(f"{path}: expected {want.__name__}, got {type(value).__name__}")
        return value
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected a boolean")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        return float(value)
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        return value
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string, got {value!r}")
        return value
    if isinstance(default, list):
        if not isinstance(value, list):
            raise ConfigError(f"{path}: expected a list, got {value!r}")
        return value
    return value


def _merge(default: dict, user: dict, path: str) -> dict:
    if not isinstance(user, dict):
        raise ConfigError(f"{path or 'config'}: expected a mapping")
    out = copy.deepcopy(default)
    for key, value in user.items():
        where = f"{path}.{key}" if path else str(key)
        if key not in default:
            raise ConfigError(f"unknown key {where!r}")
        if isinstance(default[key], dict) and key != "sweep":
            out[key] = _merge(default[key], value, where)
        else:
            out[key] = _typecheck(where, default[key], value)
    return out


def _check_levels(levels: list, expected: int) -> list:
    if len(levels) != expected:
        raise ConfigError(f"training.levels must list {expected} levels, got {len(levels)}")
    template = _level()
    return [_merge(template, lv, f"training.levels[{i}]") for i, lv in enumerate(levels)]


def resolve(user: dict) -> dict:
    """Defaults for the config's environment kind overlaid with the user's values."""
    if not isinstance(user, dict):
        raise ConfigError("config must be a mapping")
    version = user.get("version")
    if version != SCHEMA_VERSION:
        raise ConfigError(f"config version must be {SCHEMA_VERSION}, got {version!r}")
    kind = (user.get("environment") or {}).get("kind")
    if kind not in KINDS:
        raise ConfigError(f"environment.kind must be one of {KINDS}, got {kind!r}")
    return complete(kind, user)


def complete(kind: str, user: dict) -> dict:
    base = DEFAULTS[kind]
    levels = (user.get("training") or {}).get("levels")
    cfg = _merge(base, {k: v for k, v in user.items()}, "")
    if cfg["environment"]["kind"] != kind:
        raise ConfigError(f"environment.kind {cfg['environment']['kind']!r} does not match {kind!r}")
    cfg["training"]["levels"] = _check_levels(levels, len(base["training"]["levels"])) if levels else base["training"]["levels"]
    sweep = cfg["sweep"]
    if not isinstance(sweep, dict):
        raise ConfigError("sweep must be a mapping")
    params = cfg["environment"]["params"]
    for key, values in sweep.items():
        if key not in params:
            raise ConfigError(f"unknown sweep key {key!r}")
        if not isinstance(values, list) or not values:
            raise ConfigError(f"sweep.{key} must be a non-empty list")
        for v in values:
            _typecheck(f"sweep.{key}", params[key], v)
    if not cfg["seeds"] or any(isinstance(s, bool) or not isinstance(s, int) or s < 0 for s in cfg["seeds"]):
        raise ConfigError("seeds must be a non-empty list of non-negative integers")
    unknown = set(cfg["baselines"]) - BASELINES[kind]
    if unknown:
        raise ConfigError(f"unknown baselines {sorted(unknown)} for {kind}; choose from {sorted(BASELINES[kind])}")
    env_spec(kind, params)
    return cfg


SPEC_CLASSES = {"toy": ToyEnvSpec, "conversational": ConvEnvSpec, "ranking": RankEnvSpec}


def env_spec(kind: str, params: dict):
    """Build and validate the environment spec dataclass from a params mapping."""
    cls = SPEC_CLASSES[kind]
    converted = {k: tuple(tuple(x) if isinstance(x, list) else x for x in v) if isinstance(v, list) else v for k, v in params.items()}
    try:
        return cls(**converted)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"environment.params: {exc}") from None


def load(path: Union[str, Path]) -> dict:
    try:
        data = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file {path} not found") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"config file {path} is not valid YAML: {exc}") from None
    return resolve(data if data is not None else {})


def dump(cfg: dict) -> str:
    return yaml.safe_dump(cfg, sort_keys=False)
