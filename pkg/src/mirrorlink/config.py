"""Harness configuration file: strict JSON (unknown keys are errors, so
typos in predicate constants or filter fields surface immediately).
Flags always win over the file; the file path falls back to the
MIRRORLINK_CONFIG environment variable.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from .filtering import FilterConfig

ENV_VAR = "MIRRORLINK_CONFIG"

_KNOWN_KEYS = {
    "bind",
    "port",
    "tick_hz",
    "teleop_hz_expected",
    "filter",
    "task_dir",
    "dataset_dir",
    "policy",
    "eval_plan",
}


class ConfigError(ValueError):
    pass


@dataclass
class HarnessConfig:
    bind: str = "127.0.0.1"
    port: int = 8765
    tick_hz: int = 120
    teleop_hz_expected: int = 90
    filter: FilterConfig = field(default_factory=FilterConfig)
    task_dir: str | None = None
    dataset_dir: str = "dataset"
    policy: str = "oracle"
    eval_plan: str | None = None

    @staticmethod
    def load(path: str | Path | None = None) -> "HarnessConfig":
        """Load from an explicit path, else $MIRRORLINK_CONFIG, else defaults."""
        if path is None:
            path = os.environ.get(ENV_VAR) or None
        if path is None:
            return HarnessConfig()
        try:
            data = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}")
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}")
        if not isinstance(data, dict):
            raise ConfigError("config root must be a JSON object")
        unknown = set(data) - _KNOWN_KEYS
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        filt = data.pop("filter", None)
        cfg = HarnessConfig(**data)
        if filt is not None:
            known_filter = {"joint_jump_max", "ee_linear_max", "ee_angular_max", "clamp_mode", "ik"}
            bad = set(filt) - known_filter
            if bad:
                raise ConfigError(f"unknown filter config keys: {sorted(bad)}")
            cfg.filter = FilterConfig.from_dict(filt)
        return cfg
