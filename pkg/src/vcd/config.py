"""YAML run configuration: every field optional, unknown keys rejected with their line number."""

from __future__ import annotations

import dataclasses
from pathlib import Path

import yaml

from .losses import LossConfig
from .mmdp_env import MDPSpec
from .networks import NetworkConfig
from .trainer import TrainConfig, config_from_dict

SECTIONS = {"loss": LossConfig, "network": NetworkConfig, "env": MDPSpec}
ALIASES = {"loss": {"lambda": "lam"}}


class ConfigError(ValueError):
    pass


def _fields(cls) -> dict[str, dataclasses.Field]:
    return {f.name: f for f in dataclasses.fields(cls)}


def _default(f: dataclasses.Field):
    if f.default is not dataclasses.MISSING:
        return f.default
    return f.default_factory()


def _check_value(where: str, name: str, value, default) -> None:
    if isinstance(default, bool):
        ok = isinstance(value, bool)
        want = "a boolean"
    elif isinstance(default, int):
        ok = isinstance(value, int) and not isinstance(value, bool)
        want = "an integer"
    elif isinstance(default, float):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        want = "a number"
    elif isinstance(default, str):
        ok = isinstance(value, str)
        want = "a string"
    elif isinstance(default, tuple):
        ok = isinstance(value, list) and all(isinstance(v, int) and not isinstance(v, bool) for v in value)
        want = "a list of integers"
    else:
        ok, want = True, ""
    if not ok:
        raise ConfigError(f"{where}: {name} must be {want}, got {value!r}")


def _validate(node: yaml.MappingNode, cls, source: str, section: str | None) -> None:
    fields = _fields(cls)
    aliases = ALIASES.get(section or "", {})
    for key_node, value_node in node.value:
        key = key_node.value
        where = f"{source}:{key_node.start_mark.line + 1}"
        name = aliases.get(key, key)
        if section is None and key in SECTIONS:
            if not isinstance(value_node, yaml.MappingNode):
                raise ConfigError(f"{where}: section {key!r} must be a mapping")
            _validate(value_node, SECTIONS[key], source, key)
            continue
        if name not in fields:
            label = f"{section}.{key}" if section else key
            rev = {v: k for k, v in aliases.items()}
            known = sorted(rev.get(f, f) for f in fields)
            raise ConfigError(f"{where}: unknown key {label!r} (known: {', '.join(known)})")
        value = yaml.safe_load(yaml.serialize(value_node))
        _check_value(where, f"{section + '.' if section else ''}{key}", value, _default(fields[name]))


def parse_config(text: str, source: str = "<config>") -> TrainConfig:
    try:
        root = yaml.compose(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = f":{mark.line + 1}" if mark else ""
        raise ConfigError(f"{source}{line}: invalid YAML: {getattr(exc, 'problem', exc)}") from None
    if root is None:
        data = {}
    else:
        if not isinstance(root, yaml.MappingNode):
            raise ConfigError(f"{source}:{root.start_mark.line + 1}: top level must be a mapping")
        _validate(root, TrainConfig, source, None)
        data = yaml.safe_load(text) or {}
    try:
        return config_from_dict(data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{source}: {exc}") from None


def load_config(path: str | Path) -> TrainConfig:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    return parse_config(p.read_text(encoding="utf-8"), str(p))


def dump_config(cfg: TrainConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=True)


def write_config(cfg: TrainConfig, path: str | Path) -> None:
    Path(path).write_text(dump_config(cfg), encoding="utf-8")
