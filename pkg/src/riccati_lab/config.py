"""Flat ``key = value`` configuration with dotted section names.

A configuration file holds one assignment per line, for example::

    # vanilla ensemble filter, six members
    experiment = moment-bracket
    seed = 7
    model.A = 20
    check.orders = 1, 2, 3

``#`` starts a comment and blank lines are ignored.  Values are coerced to
the type of the experiment's default for the same key (int, float, bool,
str, or a comma-separated tuple of numbers), so every key an experiment
accepts is declared by its defaults.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Mapping

RESERVED_KEYS = ("experiment", "seed")
DEFAULT_MASTER_SEED = 20240601


class ConfigError(ValueError):
    """The configuration cannot be parsed or does not fit the experiment."""


def parse_text(text: str, source: str = "<config>") -> dict[str, str]:
    """Raw ``key -> value`` strings from configuration text."""
    entries: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        _check_key(key, f"{source}:{lineno}")
        if key in entries:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        entries[key] = value
    return entries


def parse_file(path: str | Path) -> dict[str, str]:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror or exc}") from exc
    return parse_text(text, str(path))


def parse_overrides(assignments: Iterable[str]) -> dict[str, str]:
    """``--set key=value`` arguments; later assignments win."""
    entries: dict[str, str] = {}
    for item in assignments:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, value = (part.strip() for part in item.split("=", 1))
        _check_key(key, "--set")
        entries[key] = value
    return entries


def _check_key(key: str, where: str) -> None:
    parts = key.split(".")
    if not key or any(not p or not all(c.isalnum() or c in "_-" for c in p) for p in parts):
        raise ConfigError(f"{where}: invalid key {key!r}")


def coerce(key: str, raw: str, default: Any) -> Any:
    """Convert a raw string to the type of ``default``."""
    try:
        if isinstance(default, bool):
            lowered = raw.lower()
            if lowered in ("true", "yes", "on", "1"):
                return True
            if lowered in ("false", "no", "off", "0"):
                return False
            raise ValueError("expected true or false")
        if isinstance(default, int):
            return _parse_int(raw)
        if isinstance(default, float):
            value = float(raw)
            if not math.isfinite(value):
                raise ValueError("must be finite")
            return value
        if isinstance(default, tuple):
            kind = type(default[0]) if default else float
            items = [item.strip() for item in raw.split(",") if item.strip()]
            if not items:
                raise ValueError("expected a comma-separated list")
            return tuple(coerce(key, item, kind(0) if kind is not str else "") for item in items)
        return raw
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot read {raw!r} as {_type_name(default)} ({exc})") from None


def _parse_int(raw: str) -> int:
    """Integers in base-prefixed, decimal or integral scientific form (``1e6``)."""
    try:
        return int(raw, 0)
    except ValueError:
        value = float(raw)
        if not (math.isfinite(value) and value.is_integer()):
            raise ValueError("expected an integer") from None
        return int(value)


def _type_name(default: Any) -> str:
    if isinstance(default, tuple):
        return f"list of {_type_name(default[0]) if default else 'float'}"
    return type(default).__name__


def format_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(format_value(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


@dataclass(frozen=True)
class ResolvedConfig:
    """Defaults merged with a file and command-line overrides."""

    experiment: str | None
    master_seed: int
    values: Mapping[str, Any]

    def __getitem__(self, key: str) -> Any:
        return self.values[key]

    def section(self, prefix: str) -> dict[str, Any]:
        """Keys under ``prefix.`` with the prefix removed."""
        start = prefix + "."
        return {k[len(start):]: v for k, v in self.values.items() if k.startswith(start)}

    def to_text(self) -> str:
        lines = []
        if self.experiment:
            lines.append(f"experiment = {self.experiment}")
        lines.append(f"seed = {self.master_seed}")
        lines.extend(f"{k} = {format_value(v)}" for k, v in sorted(self.values.items()))
        return "\n".join(lines) + "\n"


def resolve(
    defaults: Mapping[str, Any],
    layers: Iterable[Mapping[str, str]],
    experiment: str | None = None,
    master_seed: int | None = None,
) -> ResolvedConfig:
    """Apply raw layers in order over typed defaults, rejecting unknown keys."""
    values = dict(defaults)
    seed = DEFAULT_MASTER_SEED
    name = experiment
    for layer in layers:
        for key, raw in layer.items():
            if key == "experiment":
                if name is not None and raw != name:
                    raise ConfigError(f"config is for experiment {raw!r}, not {name!r}")
                name = raw
            elif key == "seed":
                seed = coerce("seed", raw, 0)
            elif key not in values:
                known = ", ".join(sorted(values))
                raise ConfigError(f"unknown key {key!r}; this experiment accepts: {known}")
            else:
                values[key] = coerce(key, raw, defaults[key])
    if master_seed is not None:
        seed = int(master_seed)
    if not 0 <= seed < 2**64:
        raise ConfigError(f"seed must be a 64-bit unsigned integer, got {seed}")
    return ResolvedConfig(experiment=name, master_seed=seed, values=values)
