"""Command-line/configuration plumbing.

Options can come from three layers with strict precedence: command-line flag
over config-file value over built-in default.  Config files are flat
``key = value`` text, one option per line, keys matching the flag names
(``neg-ratio = 4``); ``#`` starts a comment.
"""

from __future__ import annotations

import os


class ConfigError(ValueError):
    """Invalid option name or value."""


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


# Every option any command understands: name -> value parser.  File keys are
# validated against this registry; each command consumes its own subset.
OPTION_TYPES = {
    "dataset": str,
    "variant": str,
    "factors": int,
    "neg_ratio": int,
    "epochs": int,
    "lr": float,
    "batch_size": int,
    "seed": int,
    "out": str,
    "k": int,
    "raw": str,
    "format": str,
    "name": str,
    "min_user": int,
    "min_item": int,
    "no_filter": _parse_bool,
    "test_negatives": int,
    "eval_every": int,
    "patience": int,
    "alpha": float,
    "rl_checkpoint": str,
    "ml_checkpoint": str,
    "checkpoint": str,
    "itempop": _parse_bool,
    "axis": str,
    "values": str,
    "parallel": int,
    "neg_resample": str,
    "init_stddev": float,
}


def normalize_key(key: str) -> str:
    return key.strip().replace("-", "_")


def load_config_file(path: str | os.PathLike) -> dict[str, object]:
    """Parse a flat key = value file against the option registry."""
    values: dict[str, object] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.split("#", 1)[0].strip()
            if not stripped:
                continue
            if "=" not in stripped:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, _, raw = stripped.partition("=")
            key = normalize_key(key)
            if key not in OPTION_TYPES:
                raise ConfigError(f"{path}:{lineno}: unknown option {key!r}")
            try:
                values[key] = OPTION_TYPES[key](raw.strip())
            except ValueError as exc:
                raise ConfigError(f"{path}:{lineno}: bad value for {key}: {exc}") from None
    return values


def resolve_options(defaults: dict[str, object], file_values: dict[str, object],
                    cli_values: dict[str, object]) -> dict[str, object]:
    """Merge the three layers; CLI beats file beats default.

    Only keys present in ``defaults`` are relevant to the calling command;
    file values for other (valid) options are ignored.
    """
    resolved = dict(defaults)
    for key, value in file_values.items():
        if key in resolved:
            resolved[key] = value
    for key, value in cli_values.items():
        if key in resolved and value is not None:
            resolved[key] = value
    return resolved


def write_manifest(path: str | os.PathLike, command: str, version: str,
                   options: dict[str, object]) -> None:
    """Record the exact resolved configuration and code version."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# implicitcf manifest\n")
        fh.write(f"command\t{command}\n")
        fh.write(f"version\t{version}\n")
        for key in sorted(options):
            fh.write(f"{key}\t{options[key]}\n")
