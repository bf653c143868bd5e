"""Layered runtime configuration: defaults < config file < environment < flags."""

from __future__ import annotations

import json
import os
from typing import Mapping, Optional

from .errors import ConfigInvalid

ENV_PREFIX = "AUGLOOP_"

DEFAULTS: dict = {
    "max_calls": 8,
    "grace_calls": 2,
    "max_completion_tokens": 3196,
    "max_context_tokens": 10240,
    "weights": [1.0, 0.25, 0.5, 0.25, 0.5],
    "beta": 0.01,
    "workers": 4,
    "service_host": "127.0.0.1",
    "service_port": 8777,
    "backend_endpoint": None,
    "judge_endpoint": None,
}


def _coerce(raw: str):
    try:
        return json.loads(raw)
    except ValueError:
        return raw


def load_config(config_path: Optional[str] = None,
                env: Optional[Mapping[str, str]] = None,
                overrides: Optional[Mapping] = None) -> dict:
    """Merge the four layers; later layers win. Flag overrides with value
    None are treated as unset."""
    merged = dict(DEFAULTS)

    if config_path:
        try:
            with open(config_path, "r", encoding="utf-8") as fh:
                file_cfg = json.load(fh)
        except (OSError, ValueError) as exc:
            raise ConfigInvalid(f"cannot read config file {config_path}: {exc}") from exc
        if not isinstance(file_cfg, dict):
            raise ConfigInvalid(f"config file {config_path} must hold a JSON object")
        for key, value in file_cfg.items():
            if key not in DEFAULTS:
                raise ConfigInvalid(f"unknown config key {key!r} in {config_path}")
            merged[key] = value

    env = os.environ if env is None else env
    for key in DEFAULTS:
        env_key = ENV_PREFIX + key.upper()
        if env_key in env:
            merged[key] = _coerce(env[env_key])

    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key not in DEFAULTS:
            raise ConfigInvalid(f"unknown config override {key!r}")
        merged[key] = value

    return merged
