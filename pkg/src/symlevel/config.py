"""Flat `key = value` configuration files.

One assignment per line, `#` starts a comment, blank lines ignored. Command
line flags override file values; keys that a command does not understand are
rejected.
"""

from __future__ import annotations

from pathlib import Path


class ConfigError(ValueError):
    pass


def parse_flat_config(path: str | Path) -> dict[str, str]:
    result: dict[str, str] = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"{path}: line {lineno}: expected 'key = value', got {raw!r}")
        key = key.strip()
        if not key:
            raise ConfigError(f"{path}: line {lineno}: empty key")
        result[key] = value.strip()
    return result


def apply_config(args_namespace, config: dict[str, str], allowed: set[str],
                 explicitly_set: set[str]) -> None:
    """Overlay file values onto parsed args; flags that were given win."""
    for key, value in config.items():
        dest = key.replace("-", "_")
        if dest not in allowed:
            raise ConfigError(f"unknown config key {key!r} (known: {', '.join(sorted(allowed))})")
        if dest in explicitly_set:
            continue
        current = getattr(args_namespace, dest)
        if isinstance(current, bool):
            setattr(args_namespace, dest, value.lower() in ("1", "true", "yes"))
        elif isinstance(current, int):
            setattr(args_namespace, dest, int(value))
        elif isinstance(current, float):
            setattr(args_namespace, dest, float(value))
        else:
            setattr(args_namespace, dest, value)
