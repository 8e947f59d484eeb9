"""Sampling schedule for deep inspection windows.

A fixed frequency f > 0 starts windows at t0, t0+f, t0+2f, ...; a
frequency of 0 draws each gap uniformly from [frequency_min,
frequency_max]. Window durations behave the same way via the interval
fields. Deterministic under a seeded generator.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Iterator

from wsdetect.inspector.config import InspectorConfig


@dataclass(frozen=True)
class SamplingWindow:
    start_ms: float
    duration_ms: float


def schedule(config: InspectorConfig, start_ms: float = 0.0,
             rng: random.Random | None = None) -> Iterator[SamplingWindow]:
    """Infinite stream of sampling windows; take as many as needed."""
    rng = rng if rng is not None else random.Random()
    t = float(start_ms)
    while True:
        if config.inspection_interval > 0:
            duration = float(config.inspection_interval)
        else:
            duration = rng.uniform(config.interval_min, config.interval_max)
        yield SamplingWindow(start_ms=t, duration_ms=duration)
        if config.inspection_frequency > 0:
            t += config.inspection_frequency
        else:
            t += rng.uniform(config.frequency_min, config.frequency_max)
