"""Traffic-aware slot management for one outgoing link.

Once per multi-superframe the node feeds the number of packets pushed to
the link queue into an EWMA filter, derives the slot count it wants, and
emits at most one allocation or deallocation intent.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace
from typing import Iterable, Optional

from .schedule import ActEntry, ConfigError


class Intent(enum.Enum):
    ALLOCATE = "allocate"
    DEALLOCATE = "deallocate"


@dataclass(frozen=True)
class TrafficEstimate:
    alpha: float = 0.05
    depreciation_threshold: int = 50
    hysteresis: bool = True
    rate: float = 0.0
    allocated: int = 0
    required: int = 0
    msf_packet_count: int = 0
    idle_msf_counter: int = 0

    def __post_init__(self):
        if not 0 < self.alpha <= 1:
            raise ConfigError("alpha must lie in (0, 1]")
        if self.depreciation_threshold < 1:
            raise ConfigError("depreciation_threshold must be positive")
        if self.rate < 0 or self.allocated < 0:
            raise ConfigError("rate and allocated must be non-negative")

    @property
    def depreciated(self) -> bool:
        return self.idle_msf_counter >= self.depreciation_threshold


def update_estimate(est: TrafficEstimate, p_t: int) -> TrafficEstimate:
    """Fold one multi-superframe worth of enqueued packets into the estimate."""
    if p_t < 0:
        raise ConfigError("packet count must be non-negative")
    rate = est.alpha * p_t + (1.0 - est.alpha) * est.rate
    idle = est.idle_msf_counter + 1 if p_t == 0 else 0
    return replace(est, rate=rate, idle_msf_counter=idle, msf_packet_count=0)


def required_slots(est: TrafficEstimate) -> int:
    if est.depreciated:
        return 0
    target = math.ceil(est.rate)
    if not est.hysteresis:
        return target
    diff = est.rate - est.allocated
    if diff > 0:
        return target
    if diff < -2:
        return target + 1
    return est.allocated


def reconcile(est: TrafficEstimate, in_flight: bool = False) -> Optional[Intent]:
    """Single next step toward ``est.required``; nothing while a handshake is pending."""
    if in_flight:
        return None
    if est.required > est.allocated:
        return Intent.ALLOCATE
    if est.required < est.allocated:
        return Intent.DEALLOCATE
    return None


def pick_victim(entries: Iterable[ActEntry]) -> Optional[ActEntry]:
    """Most recently allocated entry; ties broken by slot position for determinism."""
    return max(entries, key=lambda e: (e.created, e.descriptor.superframe, e.descriptor.slot), default=None)


@dataclass
class LinkScheduler:
    """Per-link bookkeeping driven from the node's multi-superframe handler."""

    estimate: TrafficEstimate
    in_flight: bool = False

    def record_enqueue(self, n: int = 1) -> None:
        # counts attempts, including those a full queue turns away
        self.estimate = replace(self.estimate, msf_packet_count=self.estimate.msf_packet_count + n)

    def on_multisuperframe(self, allocated: int) -> Optional[Intent]:
        est = update_estimate(self.estimate, self.estimate.msf_packet_count)
        est = replace(est, allocated=allocated)
        est = replace(est, required=required_slots(est))
        self.estimate = est
        intent = reconcile(est, self.in_flight)
        if intent is not None:
            self.in_flight = True
        return intent

    def handshake_done(self) -> None:
        self.in_flight = False
