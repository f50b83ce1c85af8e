"""Flat dotted-key run configuration: defaults < config file < flags."""

from __future__ import annotations

import os

from .errors import ParseError, UsageError

TRUE = {"1", "true", "yes", "on"}
FALSE = {"0", "false", "no", "off"}


def coerce(key, raw, default):
    """Convert a string to the type of ``default``."""
    if isinstance(default, bool):
        s = str(raw).strip().lower()
        if s in TRUE:
            return True
        if s in FALSE:
            return False
        raise UsageError(f"{key}: expected a boolean, got {raw!r}")
    if isinstance(default, int):
        try:
            return int(raw)
        except ValueError:
            raise UsageError(f"{key}: expected an integer, got {raw!r}") from None
    if isinstance(default, float):
        try:
            return float(raw)
        except ValueError:
            raise UsageError(f"{key}: expected a number, got {raw!r}") from None
    return str(raw)


def read_config_file(path):
    out = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ParseError(f"{path}: expected key=value", lineno)
            k, v = line.split("=", 1)
            out[k.strip()] = v.strip()
    return out


def resolve(defaults, file_values=None, overrides=None):
    """Merge layers, rejecting keys that have no default."""
    resolved = dict(defaults)
    for layer in (file_values or {}, overrides or {}):
        for key, raw in layer.items():
            if key not in defaults:
                raise UsageError(f"unknown configuration key {key!r}")
            resolved[key] = coerce(key, raw, defaults[key])
    return resolved


def format_value(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_run_conf(path, command, config, version):
    lines = [f"command={command}", f"tool_version={version}"]
    lines.extend(f"{k}={format_value(config[k])}" for k in sorted(config))
    with open(os.path.join(path, "run.conf"), "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def int_list(text):
    return [int(x) for x in str(text).replace(" ", "").split(",") if x]


def str_list(text):
    return [x for x in str(text).replace(" ", "").split(",") if x]
