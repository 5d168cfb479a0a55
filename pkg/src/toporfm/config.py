"""YAML pipeline configuration with dotted-path overrides.

Every key maps onto a field of :class:`~toporfm.experiment.PipelineConfig`
or one of its sections; unknown keys and wrongly typed values raise
ConfigError naming the offending key.
"""

from __future__ import annotations

import dataclasses
import os

import yaml

from .errors import ConfigError
from .experiment import PipelineConfig

_SCALARS = {
    "int": (int,),
    "float": (int, float),
    "str": (str,),
    "bool": (bool,),
}


def _check_value(key: str, type_name: str, value):
    names = [t.strip() for t in type_name.split("|")]
    if value is None:
        if "None" in names:
            return None
        raise ConfigError(f"{key}: null is not allowed")
    for name in names:
        if name == "tuple" and isinstance(value, (list, tuple)):
            return tuple(value)
        kinds = _SCALARS.get(name)
        # bool is an int subclass; keep them apart
        if kinds and isinstance(value, kinds) and not (isinstance(value, bool) and name != "bool"):
            return float(value) if name == "float" else value
    raise ConfigError(f"{key}: expected {type_name}, got {type(value).__name__} {value!r}")


def _build(cls, data: dict, prefix: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{prefix.rstrip('.') or 'config'}: expected a mapping")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        path = prefix + str(key)
        f = fields.get(key)
        if f is None:
            raise ConfigError(f"unknown config key {path!r}")
        default = f.default
        if dataclasses.is_dataclass(default):
            kwargs[key] = _build(type(default), value if value is not None else {}, path + ".")
        else:
            kwargs[key] = _check_value(path, str(f.type), value)
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{prefix.rstrip('.') or 'config'}: {exc}") from exc


def _apply_override(tree: dict, override: str):
    if "=" not in override:
        raise ConfigError(f"override {override!r} is not key=value")
    key, raw = override.split("=", 1)
    key = key.strip()
    try:
        value = yaml.safe_load(raw) if raw.strip() else ""
    except yaml.YAMLError as exc:
        raise ConfigError(f"{key}: cannot parse {raw!r}") from exc
    node = tree
    parts = key.split(".")
    for part in parts[:-1]:
        nxt = node.setdefault(part, {})
        if not isinstance(nxt, dict):
            raise ConfigError(f"unknown config key {key!r}")
        node = nxt
    node[parts[-1]] = value


def config_from_dict(tree: dict, overrides=()) -> PipelineConfig:
    tree = dict(tree or {})
    tree = {k: (dict(v) if isinstance(v, dict) else v) for k, v in tree.items()}
    for ov in overrides:
        _apply_override(tree, ov)
    return _build(PipelineConfig, tree, "")


def parse_config(path: str | None, overrides=()) -> PipelineConfig:
    """Load ``path`` (YAML), apply ``key=value`` overrides, validate."""
    tree = {}
    if path is not None:
        if not os.path.exists(path):
            raise ConfigError(f"config file not found: {path}")
        with open(path) as fh:
            try:
                tree = yaml.safe_load(fh) or {}
            except yaml.YAMLError as exc:
                raise ConfigError(f"{path}: {exc}") from exc
    return config_from_dict(tree, overrides)


def dump_config(cfg: PipelineConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=True)
