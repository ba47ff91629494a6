"""Flat ``key = value`` configuration files with dotted section prefixes.

Example::

    # subject 3
    model.thigh.mass = 6.5
    ident.n_restarts = 10

Values stay strings here; consumers convert with :func:`get_float` and
friends so that a bad value is reported with its key.
"""

from __future__ import annotations

import configparser
import hashlib
from importlib import resources
from pathlib import Path

_SECTION = "__flat__"


class ConfigError(ValueError):
    """Malformed or invalid configuration."""


def parse_config(text: str, source: str = "<string>") -> dict:
    parser = configparser.ConfigParser(
        delimiters=("=",), comment_prefixes=("#", ";"), interpolation=None
    )
    parser.optionxform = str  # keys are case sensitive
    try:
        parser.read_string(f"[{_SECTION}]\n" + text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None
    return dict(parser[_SECTION])


def load_config(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text, source=str(path))


def dump_config(cfg: dict) -> str:
    return "".join(f"{k} = {cfg[k]}\n" for k in sorted(cfg))


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(dump_config(cfg).encode()).hexdigest()


def package_data(name: str) -> Path:
    return Path(str(resources.files("swing_impedance") / "data" / name))


def get_float(cfg, key, default=None, *, minimum=None):
    if key not in cfg:
        if default is None:
            raise ConfigError(f"missing config key {key!r}")
        return float(default)
    try:
        value = float(cfg[key])
    except ValueError:
        raise ConfigError(f"{key}: expected a number, got {cfg[key]!r}") from None
    if minimum is not None and value < minimum:
        raise ConfigError(f"{key}: must be >= {minimum}, got {value}")
    return value


def get_int(cfg, key, default=None, *, minimum=None):
    value = get_float(cfg, key, default, minimum=minimum)
    if value != int(value):
        raise ConfigError(f"{key}: expected an integer, got {cfg[key]!r}")
    return int(value)


def get_bool(cfg, key, default=False):
    if key not in cfg:
        return default
    raw = str(cfg[key]).strip().lower()
    if raw in ("1", "true", "yes", "on"):
        return True
    if raw in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"{key}: expected a boolean, got {cfg[key]!r}")


def subsection(cfg: dict, prefix: str) -> dict:
    """Keys under ``prefix.`` with the prefix stripped."""
    p = prefix.rstrip(".") + "."
    return {k[len(p):]: v for k, v in cfg.items() if k.startswith(p)}
