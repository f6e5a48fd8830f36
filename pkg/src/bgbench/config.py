"""JSON run configuration with strict keys and flag overrides.

A config file is a JSON object. Top-level keys are the long option names of
the command being run (dashes or underscores both accepted) plus, for
``train-toy``, the sections ``loss``, ``train`` and ``data``. Command-line
flags win over file values; file values win over built-in defaults.
Everything is validated before any input is read or output written.
"""

import json
from dataclasses import dataclass, field, fields
from pathlib import Path

from bgbench.corruption import DEFAULT_SEEDS


class ConfigError(ValueError):
    """Invalid or unknown configuration; reported as a usage error."""


@dataclass
class RunConfig:
    command: str
    params: dict
    sections: dict = field(default_factory=dict)

    @property
    def seeds(self):
        seeds = self.params.get("seed")
        if seeds is None:
            return list(DEFAULT_SEEDS)
        if isinstance(seeds, int):
            return [seeds]
        if not seeds or not all(isinstance(s, int) and not isinstance(s, bool) for s in seeds):
            raise ConfigError(f"seed must be an integer or a non-empty list of integers, got {seeds!r}")
        return list(seeds)

    def __getitem__(self, key):
        return self.params[key]

    def get(self, key, default=None):
        value = self.params.get(key)
        return default if value is None else value


def load_config_file(path):
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"config {path} must be a JSON object")
    return data


def dataclass_from_dict(cls, data, what):
    """Build ``cls`` from ``data``, rejecting unknown keys."""
    if not isinstance(data, dict):
        raise ConfigError(f"{what} must be a JSON object")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown {what} keys: {unknown}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {what}: {exc}") from None


def build_run_config(command, flags, file_data=None, defaults=None, section_names=()):
    """Merge ``defaults < file_data < flags`` for one command.

    ``flags`` maps option names to parsed values, ``None`` meaning "not
    given". Keys of ``file_data`` must be option names or section names.
    """
    file_data = {k.replace("-", "_"): v for k, v in (file_data or {}).items()}
    known = set(flags) | set(section_names)
    unknown = sorted(set(file_data) - known)
    if unknown:
        raise ConfigError(f"unknown config keys for {command}: {unknown}")
    params = dict(defaults or {})
    for key in flags:
        if key in file_data:
            params[key] = file_data[key]
    for key, value in flags.items():
        if value is not None:
            params[key] = value
        params.setdefault(key, None)
    sections = {name: file_data.get(name, {}) for name in section_names}
    return RunConfig(command, params, sections)


def require(cfg, *keys):
    missing = [k for k in keys if cfg.params.get(k) is None]
    if missing:
        opts = ", ".join("--" + k.replace("_", "-") for k in missing)
        raise ConfigError(f"{cfg.command}: missing required option(s) {opts}")


def as_path(value):
    return None if value is None else Path(value)
