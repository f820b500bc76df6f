"""Flat ``key = value`` configuration files.

Values are kept as strings until a consumer asks for a typed view; ``#``
starts a comment. Example::

    # corpus
    seed = 7
    n_cascades = 200
    pattern_mix = star:0.2, split:0.6, chain:0.2
"""

import builtins
import configparser
from pathlib import Path

from .errors import ConfigError

_SECTION = "config"


def parse_config(text):
    parser = configparser.ConfigParser(
        delimiters=("=",), comment_prefixes=("#",), inline_comment_prefixes=("#",),
        interpolation=None, strict=True,
    )
    parser.optionxform = str
    try:
        parser.read_string(f"[{_SECTION}]\n" + text)
    except configparser.Error as exc:
        raise ConfigError(f"bad config: {exc}") from exc
    return dict(parser[_SECTION])


def load_config(path):
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text)


def dump_config(values):
    return "".join(f"{k} = {v}\n" for k, v in values.items())


def parse_mapping(value):
    """``"a:0.5, b:0.5"`` -> ``{"a": 0.5, "b": 0.5}``."""
    out = {}
    for item in value.split(","):
        item = item.strip()
        if not item:
            continue
        key, sep, num = item.partition(":")
        if not sep:
            raise ConfigError(f"expected key:value, got {item!r}")
        try:
            out[key.strip()] = float(num)
        except ValueError as exc:
            raise ConfigError(f"not a number in {item!r}") from exc
    return out


def format_mapping(mapping):
    return ", ".join(f"{k}:{v!r}" for k, v in mapping.items())


def parse_list(value, cast=float):
    try:
        return [cast(v) for v in value.replace(",", " ").split()]
    except ValueError as exc:
        raise ConfigError(f"bad list {value!r}") from exc


class Settings:
    """Typed accessors over a flat string mapping with defaults."""

    def __init__(self, values=None, **overrides):
        self.values = dict(values or {})
        self.values.update({k: str(v) for k, v in overrides.items() if v is not None})

    def __contains__(self, key):
        return key in self.values

    def get(self, key, default, cast=str):
        if key not in self.values:
            return default
        raw = self.values[key]
        try:
            if cast is bool:
                low = raw.strip().lower()
                if low in ("1", "true", "yes", "on"):
                    return True
                if low in ("0", "false", "no", "off"):
                    return False
                raise ValueError(raw)
            return cast(raw)
        except ValueError as exc:
            raise ConfigError(f"{key}: cannot parse {raw!r}") from exc

    def int(self, key, default):
        return self.get(key, default, int)

    def float(self, key, default):
        return self.get(key, default, float)

    def bool(self, key, default):
        return self.get(key, default, bool)

    def list(self, key, default, cast=builtins.float):
        if key not in self.values:
            return list(default)
        return parse_list(self.values[key], cast)

    def mapping(self, key, default):
        if key not in self.values:
            return builtins.dict(default)
        return parse_mapping(self.values[key])
