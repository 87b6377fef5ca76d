"""Experiment configuration: INI-style files with strict validation and a
stable digest so reruns and CI caching are exact.

Sections are [problem], [run], [lab], [output]; unknown keys are rejected and
every violation is reported, not just the first.
"""

from __future__ import annotations

import configparser
import hashlib
from dataclasses import dataclass, field
from typing import Optional


class ConfigError(ValueError):
    """Carries every validation error found in a config file."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


def _bool(raw: str) -> bool:
    low = raw.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def _float_list(raw: str):
    raw = raw.strip()
    if not raw:
        return []
    return [float(v) for v in raw.split(",")]


def _int_list(raw: str):
    raw = raw.strip()
    if not raw:
        return []
    return [int(v) for v in raw.split(",")]


def _str_list(raw: str):
    return [v.strip() for v in raw.split(",") if v.strip()]


# key -> (parser, default, validator, message)
_SCHEMA = {
    "problem": {
        "kind": (str, "logistic", lambda v: v in ("least_squares", "logistic", "sigmoid", "mlp"),
                 "must be one of least_squares|logistic|sigmoid|mlp"),
        "dim": (int, 2, lambda v: v >= 1, "must be >= 1"),
        "feature_bound": (float, 1.0, lambda v: v > 0, "must be > 0"),
        "radius": (float, 5.0, lambda v: v > 0, "must be > 0"),
        "ridge": (float, 0.0, lambda v: v >= 0, "must be >= 0"),
        "label_bound": (float, 1.5, lambda v: v >= 0, "must be >= 0"),
        "hidden": (int, 4, lambda v: 1 <= v <= 8, "must be in [1, 8]"),
        "n": (int, 100, lambda v: v >= 2, "must be >= 2"),
        "atoms": (int, 16, lambda v: v >= 0, "must be >= 0 (0 = continuous)"),
        "label_noise": (float, 0.1, lambda v: 0 <= v <= 1, "must be in [0, 1]"),
        "dist_seed": (int, 7, lambda v: True, ""),
    },
    "run": {
        "steps": (int, 200, lambda v: v >= 1, "must be >= 1"),
        "schedule": (str, "constant",
                     lambda v: v in ("constant", "inverse_t", "inverse_strong"),
                     "must be constant|inverse_t|inverse_strong"),
        "alpha": (float, 0.01, lambda v: v > 0, "must be > 0"),
        "c": (float, 0.0, lambda v: v >= 0, "must be >= 0"),
        "gamma": (float, 0.0, lambda v: v >= 0, "must be >= 0"),
        "scheme": (str, "uniform", lambda v: v in ("uniform", "permutation"),
                   "must be uniform|permutation"),
        "fixed_permutation": (_bool, False, lambda v: True, ""),
        "seed": (int, 1234, lambda v: True, ""),
        "weight_decay": (float, 0.0, lambda v: v >= 0, "must be >= 0"),
        "dropout": (float, 0.0, lambda v: 0 <= v <= 1, "must be in (0, 1] or 0 = off"),
        "dropout_keep": (float, 0.0, lambda v: 0 <= v <= 1, "must be in (0, 1] or 0 = rate"),
        "dropout_mode": (str, "norm_exact", lambda v: v in ("norm_exact", "inverted"),
                         "must be norm_exact|inverted"),
        "clip": (float, 0.0, lambda v: v >= 0, "must be >= 0 (0 = off)"),
        "projection": (float, 0.0, lambda v: v >= 0, "must be >= 0 (0 = off)"),
        "record_every": (int, 0, lambda v: v >= 0, "must be >= 0 (0 = auto)"),
        "average": (_bool, False, lambda v: True, ""),
        "init": (str, "zeros", lambda v: v in ("zeros", "gauss"), "must be zeros|gauss"),
    },
    "lab": {
        "trials": (int, 100, lambda v: v >= 1, "must be >= 1"),
        "gap_trials": (int, 200, lambda v: v >= 2, "must be >= 2"),
        "probe_size": (int, 256, lambda v: v >= 1, "must be >= 1"),
        "population_samples": (int, 4096, lambda v: v >= 1, "must be >= 1"),
        "alpha_sweep": (_float_list, [], lambda v: all(a > 0 for a in v),
                        "entries must be > 0"),
        "t_sweep": (_int_list, [], lambda v: all(t >= 1 for t in v), "entries must be >= 1"),
        "seed": (int, 99, lambda v: True, ""),
    },
    "output": {
        "dir": (str, "out", lambda v: bool(v), "must be nonempty"),
        "formats": (_str_list, ["json", "csv"],
                    lambda v: all(f in ("json", "csv") for f in v),
                    "entries must be json|csv"),
        "svg": (_bool, False, lambda v: True, ""),
    },
}


@dataclass(frozen=True)
class ExperimentConfig:
    problem: dict
    run: dict
    lab: dict
    output: dict
    digest: str = field(default="", compare=False)

    def section(self, name: str) -> dict:
        return getattr(self, name)


def _digest_of(values: dict) -> str:
    parts = []
    for section in sorted(values):
        for key in sorted(values[section]):
            v = values[section][key]
            parts.append(f"{section}.{key}={v!r}")
    return hashlib.sha256("\n".join(parts).encode("utf-8")).hexdigest()[:16]


def parse_config_text(text: str, source: str = "<config>") -> ExperimentConfig:
    parser = configparser.ConfigParser(
        interpolation=None, inline_comment_prefixes=("#", ";")
    )
    errors = []
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError([f"{source}: {exc}"]) from exc

    values = {section: dict() for section in _SCHEMA}
    for section in parser.sections():
        if section not in _SCHEMA:
            errors.append(f"unknown section [{section}]")
            continue
        schema = _SCHEMA[section]
        for key, raw in parser.items(section):
            if key not in schema:
                errors.append(f"unknown key {section}.{key}")
                continue
            conv, _default, check, message = schema[key]
            try:
                value = conv(raw)
            except ValueError:
                errors.append(f"{section}.{key}: cannot parse {raw!r}")
                continue
            if not check(value):
                errors.append(f"{section}.{key} = {raw}: {message}")
                continue
            values[section][key] = value
    for section, schema in _SCHEMA.items():
        for key, (_conv, default, _check, _msg) in schema.items():
            values[section].setdefault(key, default)

    if errors:
        raise ConfigError(errors)
    return ExperimentConfig(
        problem=values["problem"],
        run=values["run"],
        lab=values["lab"],
        output=values["output"],
        digest=_digest_of(values),
    )


def parse_config(path) -> ExperimentConfig:
    """Parse and validate a config file; raises ConfigError listing every problem."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError([f"cannot read {path}: {exc}"]) from exc
    return parse_config_text(text, source=str(path))


def override_seed(config: ExperimentConfig, seed: Optional[int]) -> ExperimentConfig:
    """Replace the run seed (CLI --seed); the digest tracks the override."""
    if seed is None:
        return config
    run = dict(config.run)
    run["seed"] = int(seed)
    values = {"problem": config.problem, "run": run, "lab": config.lab,
              "output": config.output}
    return ExperimentConfig(
        problem=config.problem, run=run, lab=config.lab, output=config.output,
        digest=_digest_of(values),
    )
