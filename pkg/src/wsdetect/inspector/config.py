"""Inspector configuration: sampling knobs, paths, mode."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, fields
from pathlib import Path

ENV_CONFIG_PATH = "WS_INSPECTOR_CONFIG"


class ConfigError(Exception):
    pass


@dataclass
class InspectorConfig:
    deep_inspecting: bool = True
    # all durations in milliseconds; 0 means "randomize within range"
    inspection_frequency: int = 120_000
    frequency_min: int = 60_000
    frequency_max: int = 300_000
    inspection_interval: int = 20_000
    interval_min: int = 10_000
    interval_max: int = 30_000
    rules_dir: str = "/etc/NetIDPS/rules"
    socket_path: str = "/run/wsdetect/inspector.sock"
    home_net: list[str] = field(default_factory=lambda: ["$HOME_NET"])
    model_path: str = ""
    sid_start: int = 3_000_001
    mode: str = "ips"  # "ips" drops, "ids" only alerts
    blacklist_ttl_s: int = 86_400
    eve_path: str = ""

    def __post_init__(self):
        if self.frequency_min > self.frequency_max:
            raise ConfigError("frequency_min must be <= frequency_max")
        if self.interval_min > self.interval_max:
            raise ConfigError("interval_min must be <= interval_max")
        for name in ("frequency_min", "frequency_max", "interval_min",
                     "interval_max"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.inspection_frequency < 0 or self.inspection_interval < 0:
            raise ConfigError("durations cannot be negative")
        if self.mode not in ("ips", "ids"):
            raise ConfigError("mode must be 'ips' or 'ids'")

    @property
    def rule_action(self) -> str:
        # passive deployments cannot drop anything: rules degrade to alert
        return "drop" if self.mode == "ips" else "alert"


def load_config(path: str | Path | None = None, overrides: dict | None = None,
                ) -> InspectorConfig:
    """Config from a JSON file plus overrides. With no explicit path the
    WS_INSPECTOR_CONFIG environment variable is consulted."""
    data: dict = {}
    if path is None:
        path = os.environ.get(ENV_CONFIG_PATH) or None
    if path is not None:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: config must be a JSON object")
        data.update(raw)
    if overrides:
        data.update({k: v for k, v in overrides.items() if v is not None})
    known = {f.name for f in fields(InspectorConfig)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(sorted(unknown))}")
    return InspectorConfig(**data)
