"""Flat key=value run configuration.

One ``key = value`` pair per line, ``#`` starts a comment.  Precedence
when resolving a run: command-line overrides > config file > defaults.
Recognized keys are documented in the README; per-element
electrostatics tables use ``elec.alpha.<symbol>`` and
``elec.hardness.<symbol>``.
"""

from __future__ import annotations


class ConfigError(ValueError):
    """Bad run configuration (exit code 65 at the CLI)."""


def parse_config_text(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for ln, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {ln}: expected key=value, got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if not key:
            raise ConfigError(f"line {ln}: empty key")
        out[key] = value.strip()
    return out


def load_config(path) -> dict[str, str]:
    try:
        with open(path) as fh:
            return parse_config_text(fh.read())
    except OSError as err:
        raise ConfigError(f"cannot read config file {path}: {err}") from err


def resolve(defaults: dict[str, str], file_cfg: dict[str, str] | None,
            overrides: dict[str, str] | None) -> dict[str, str]:
    merged = dict(defaults)
    merged.update(file_cfg or {})
    merged.update(overrides or {})
    return merged


def get_float(cfg: dict[str, str], key: str) -> float:
    try:
        return float(cfg[key])
    except KeyError:
        raise ConfigError(f"missing config key {key}") from None
    except ValueError:
        raise ConfigError(f"config key {key} must be a number, got {cfg[key]!r}") from None


def get_int(cfg: dict[str, str], key: str) -> int:
    try:
        return int(cfg[key])
    except KeyError:
        raise ConfigError(f"missing config key {key}") from None
    except ValueError:
        raise ConfigError(f"config key {key} must be an integer, got {cfg[key]!r}") from None


def get_bool(cfg: dict[str, str], key: str) -> bool:
    raw = cfg.get(key)
    if raw is None:
        raise ConfigError(f"missing config key {key}")
    low = raw.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"config key {key} must be a boolean, got {raw!r}")


def element_table(cfg: dict[str, str], prefix: str) -> dict[str, float]:
    """Collect per-element overrides like ``elec.alpha.Li = 1.2``."""
    out = {}
    for key, value in cfg.items():
        if key.startswith(prefix + "."):
            symbol = key[len(prefix) + 1 :]
            try:
                out[symbol] = float(value)
            except ValueError:
                raise ConfigError(f"config key {key} must be a number") from None
    return out
