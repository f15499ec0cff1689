"""Declarative run configuration.

A run is described by a single INI-style file with flat key = value pairs
grouped into sections. The schema below is exhaustive: unknown sections or
keys are rejected outright so typos fail loudly instead of silently using a
default. Every key is optional; command-line flags override file values.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, fields
from pathlib import Path

__all__ = ["ConfigError", "RunConfig", "load_run_config", "resolve_backend"]


class ConfigError(ValueError):
    """Invalid, unknown, or unparseable configuration input."""


# user-facing backend names (CLI flags) to internal identifiers
_BACKENDS = {
    "zono": "zonotope_full",
    "zono-int-err": "zonotope_interval_errors",
    "ibp": "ibp",
}


def resolve_backend(name: str) -> str:
    """Map a CLI backend alias to its internal name (internal names pass through)."""
    if name in _BACKENDS:
        return _BACKENDS[name]
    if name in _BACKENDS.values():
        return name
    raise ConfigError(
        f"unknown backend {name!r}; choose from {sorted(_BACKENDS)}"
    )


def _parse_int(raw: str) -> int:
    return int(raw)


def _parse_float(raw: str) -> float:
    return float(raw)


def _parse_str(raw: str) -> str:
    return raw.strip()


def _parse_int_tuple(raw: str) -> tuple[int, ...]:
    raw = raw.strip()
    if not raw:
        return ()
    return tuple(int(part) for part in raw.split(","))


def _parse_str_tuple(raw: str) -> tuple[str, ...]:
    return tuple(part.strip() for part in raw.split(",") if part.strip())


def _parse_choice(*options):
    def parse(raw: str) -> str:
        value = raw.strip()
        if value not in options:
            raise ValueError(f"must be one of {options}, got {value!r}")
        return value

    return parse


def _parse_backend(raw: str) -> str:
    return resolve_backend(raw.strip())


@dataclass
class RunConfig:
    """Typed union of every section; field names are section_key."""

    # [dataset]
    dataset_kind: str = "2d"
    dataset_train_images: str | None = None
    dataset_train_labels: str | None = None
    dataset_test_images: str | None = None
    dataset_test_labels: str | None = None
    dataset_limit: int | None = None
    dataset_eval_limit: int | None = None
    # [model]
    model_hidden: tuple[int, ...] = (100, 100)
    model_activation: str = "relu"
    # [train]
    train_epochs: int = 10
    train_batch_size: int = 64
    train_learning_rate: float = 0.01
    train_optimizer: str = "adam"
    train_seed: int = 0
    train_epsilon: float = 0.0
    train_tau: float = 0.0
    train_backend: str = "zonotope_full"
    train_warmup_epochs: int = 0
    train_rampup_epochs: int = 0
    train_lr_decay_epochs: tuple[int, ...] = ()
    train_lr_decay_factor: float = 0.1
    train_grad_clip_norm: float = 10.0
    train_input_set_mode: str = "linf"
    train_fgsm_attacks: int = 1
    train_holdout_fraction: float = 0.0
    # [attack]
    attack_epsilon: float | None = None
    attack_iterations: int = 40
    attack_step_size: float = 0.01
    # [verify]
    verify_epsilon: float | None = None
    verify_backend: str | None = None
    # [max_radius]
    max_radius_hi: float = 0.1
    max_radius_iters: int = 10
    # [compare]
    compare_kinds: tuple[str, ...] = ("tanh", "sigmoid")
    compare_lo: float = -4.0
    compare_hi: float = 4.0
    compare_steps: int = 25
    # [output]
    output_dir: str = "out"


_PARSERS = {
    "dataset": {
        "kind": _parse_choice("2d", "mnist"),
        "train_images": _parse_str,
        "train_labels": _parse_str,
        "test_images": _parse_str,
        "test_labels": _parse_str,
        "limit": _parse_int,
        "eval_limit": _parse_int,
    },
    "model": {
        "hidden": _parse_int_tuple,
        "activation": _parse_choice("relu", "tanh", "sigmoid"),
    },
    "train": {
        "epochs": _parse_int,
        "batch_size": _parse_int,
        "learning_rate": _parse_float,
        "optimizer": _parse_choice("sgd", "adam"),
        "seed": _parse_int,
        "epsilon": _parse_float,
        "tau": _parse_float,
        "backend": _parse_backend,
        "warmup_epochs": _parse_int,
        "rampup_epochs": _parse_int,
        "lr_decay_epochs": _parse_int_tuple,
        "lr_decay_factor": _parse_float,
        "grad_clip_norm": _parse_float,
        "input_set_mode": _parse_choice("linf", "fgsm"),
        "fgsm_attacks": _parse_int,
        "holdout_fraction": _parse_float,
    },
    "attack": {
        "epsilon": _parse_float,
        "iterations": _parse_int,
        "step_size": _parse_float,
    },
    "verify": {
        "epsilon": _parse_float,
        "backend": _parse_backend,
    },
    "max_radius": {
        "hi": _parse_float,
        "iters": _parse_int,
    },
    "compare": {
        "kinds": _parse_str_tuple,
        "lo": _parse_float,
        "hi": _parse_float,
        "steps": _parse_int,
    },
    "output": {
        "dir": _parse_str,
    },
}

_FIELD_NAMES = {f.name for f in fields(RunConfig)}
assert all(
    f"{section}_{key}" in _FIELD_NAMES
    for section, keys in _PARSERS.items()
    for key in keys
)


def load_run_config(path) -> RunConfig:
    """Parse and schema-validate an INI run configuration file."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str  # keys are case-sensitive; "Epochs" is unknown
    try:
        parser.read_string(path.read_text(), source=str(path))
    except configparser.Error as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from exc

    cfg = RunConfig()
    for section in parser.sections():
        if section not in _PARSERS:
            raise ConfigError(
                f"unknown section [{section}] in {path}; "
                f"known sections: {sorted(_PARSERS)}"
            )
        for key, raw in parser.items(section):
            if key not in _PARSERS[section]:
                raise ConfigError(
                    f"unknown key {key!r} in section [{section}] of {path}; "
                    f"known keys: {sorted(_PARSERS[section])}"
                )
            try:
                value = _PARSERS[section][key](raw)
            except ValueError as exc:
                raise ConfigError(
                    f"bad value for {section}.{key} in {path}: {exc}"
                ) from exc
            setattr(cfg, f"{section}_{key}", value)
    return cfg
