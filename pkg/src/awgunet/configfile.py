"""Flat key=value config files and run manifests.

The format is one ``key = value`` per line, ``#`` comments, blank lines
ignored.  The same format serves three roles: user-authored run configs,
the config text embedded in checkpoints, and the resolved manifest a
training run writes before its first step.  A manifest is itself a valid
config, so a finished run can be reproduced by pointing ``train
--config`` at it (in deterministic mode the replay is bit-identical).
"""

from __future__ import annotations

import datetime as _dt
from pathlib import Path

from .exceptions import ConfigError
from .model import ModelConfig
from .training import TrainConfig

# Keys a manifest may carry beyond the two config blocks.  "version" and
# "timestamp" are informational on re-read; the rest feed CLI defaults.
RUN_KEYS = ("data", "out", "threshold", "split_mode", "fractions",
            "synthetic_blobs", "version", "timestamp")


def parse_config_text(text: str, source: str = "<config>") -> dict[str, str]:
    mapping: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(
                f"{source}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        if key in mapping:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        mapping[key] = value.strip()
    return mapping


def read_config_file(path) -> dict[str, str]:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return parse_config_text(path.read_text(), source=str(path))


def split_mapping(mapping: dict[str, str]):
    """Partition a flat mapping into (model keys, train keys, run keys).

    Unknown keys raise a ConfigError naming them, so typos fail loudly.
    """
    model_keys = set(ModelConfig().to_mapping())
    train_keys = set(TrainConfig().to_mapping())
    model_part, train_part, run_part = {}, {}, {}
    unknown = []
    for key, value in mapping.items():
        if key in model_keys:
            model_part[key] = value
        elif key in train_keys:
            train_part[key] = value
        elif key in RUN_KEYS:
            run_part[key] = value
        else:
            unknown.append(key)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    return model_part, train_part, run_part


def resolve_configs(file_mapping: dict[str, str],
                    overrides: dict[str, str]):
    """File values override defaults; explicit flag values override both."""
    merged = dict(file_mapping)
    merged.update(overrides)
    model_part, train_part, run_part = split_mapping(merged)
    return (ModelConfig.from_mapping(model_part),
            TrainConfig.from_mapping(train_part),
            run_part)


def manifest_text(model_config: ModelConfig, train_config: TrainConfig,
                  run_values: dict[str, str], version: str) -> str:
    lines = ["# resolved run manifest (re-runnable as --config)"]
    lines.append(f"version = {version}")
    timestamp = _dt.datetime.now(_dt.timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")
    lines.append(f"timestamp = {timestamp}")
    for key, value in model_config.to_mapping().items():
        lines.append(f"{key} = {value}")
    for key, value in train_config.to_mapping().items():
        lines.append(f"{key} = {value}")
    for key in sorted(run_values):
        if key in ("version", "timestamp"):
            continue
        lines.append(f"{key} = {run_values[key]}")
    return "\n".join(lines) + "\n"
