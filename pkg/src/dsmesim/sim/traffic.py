"""Per-origin packet generators."""

from __future__ import annotations

import math
import random
from dataclasses import dataclass
from typing import Iterator, Optional

from ..schedule import SYMBOL_DURATION, ConfigError


@dataclass(frozen=True)
class TrafficSpec:
    kind: str = "poisson"
    # packets per second per origin; 0 disables generation
    rate: float = 1.0
    payload: int = 127

    @property
    def interval(self) -> float:
        """I_up in seconds."""
        return math.inf if self.rate == 0 else 1.0 / self.rate


def emission_times(spec: TrafficSpec, rng: random.Random, start: int = 0, symbol: float = SYMBOL_DURATION) -> Iterator[int]:
    """Emission instants in symbols.

    Fixed generation is phase aligned: every origin emits at I_up, 2 I_up, ...
    Poisson generation draws independent exponential gaps with mean I_up.
    """
    if spec.rate < 0:
        raise ConfigError("rate must be non-negative")
    if spec.rate == 0:
        return
    if spec.kind == "fixed":
        step = spec.interval / symbol
        k = 1
        while True:
            yield start + int(round(k * step))
            k += 1
    elif spec.kind == "poisson":
        t = float(start)
        lam = spec.rate * symbol
        while True:
            t += rng.expovariate(lam)
            yield int(round(t))
    else:
        raise ConfigError(f"unknown traffic kind {spec.kind!r}")


class TrafficGenerator:
    """Pulls from ``emission_times`` one event at a time."""

    def __init__(self, loop, origin: int, spec: TrafficSpec, rng: random.Random, emit, stop_at: Optional[int] = None):
        self.loop = loop
        self.origin = origin
        self.emit = emit
        self.stop_at = stop_at
        self._times = emission_times(spec, rng)
        self._schedule()

    def _schedule(self) -> None:
        t = next(self._times, None)
        if t is None or (self.stop_at is not None and t > self.stop_at):
            return
        self.loop.at(max(t, self.loop.now), self._fire)

    def _fire(self) -> None:
        self.emit(self.origin, self.loop.now)
        self._schedule()


def traffic_tick(spec: TrafficSpec, rng: random.Random, horizon: int) -> list:
    """All emission times up to ``horizon`` symbols."""
    out = []
    for t in emission_times(spec, rng):
        if t > horizon:
            break
        out.append(t)
    return out
