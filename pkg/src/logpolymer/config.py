"""Plain `key = value` configuration files.

Lines starting with ``#`` and blank lines are ignored; trailing ``# ...``
comments are stripped. Values are parsed as int, float, bool, or a
comma-separated list of those; anything else stays a string. Keys ``sizes``,
``replicas``, ``seed`` and ``threads`` are run settings, every other key goes
to the experiment parameters.
"""
from __future__ import annotations

RUN_KEYS = ("sizes", "replicas", "seed", "threads")


class ConfigFileError(ValueError):
    pass


def parse_scalar(text: str):
    t = text.strip()
    low = t.lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    for cast in (int, float):
        try:
            return cast(t)
        except ValueError:
            pass
    return t


def parse_value(text: str):
    if "," in text:
        return [parse_scalar(p) for p in text.split(",") if p.strip()]
    return parse_scalar(text)


def parse_config_text(text: str) -> dict:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigFileError(f"line {lineno}: expected key = value")
        key, value = (p.strip() for p in line.split("=", 1))
        if not key:
            raise ConfigFileError(f"line {lineno}: empty key")
        out[key] = parse_value(value)
    return out


def load_config(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return parse_config_text(fh.read())


def split_settings(values: dict) -> tuple[dict, dict]:
    """Separate run settings from experiment parameters."""
    run = {k: values[k] for k in RUN_KEYS if k in values}
    if "sizes" in run and not isinstance(run["sizes"], list):
        run["sizes"] = [run["sizes"]]
    params = {k: v for k, v in values.items() if k not in RUN_KEYS}
    return run, params
