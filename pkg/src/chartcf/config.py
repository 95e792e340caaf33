"""Flat key=value config files mirroring the CLI options."""

from __future__ import annotations

from pathlib import Path

from .errors import ConfigError

# Every key a config file may carry; CLI flags override these.
KNOWN_KEYS = frozenset(
    {
        "manifest",
        "out_dir",
        "base_url",
        "api_key_env",
        "modifier_model",
        "judge_model",
        "max_retries",
        "timeout_s",
        "requests_per_minute",
        "strategy",
        "rho",
        "rng_seed",
        "concurrency",
        "workers",
        "emit_mode",
        "symmetric",
        "worker_cmd",
        "transport",
    }
)


def parse_config_file(path: str | Path) -> dict[str, str]:
    """Read `key = value` lines; '#' starts a comment, blanks are skipped."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    values: dict[str, str] = {}
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in KNOWN_KEYS:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        values[key] = value
    return values
