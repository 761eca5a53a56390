"""Timing and slot arithmetic of the DSME superframe hierarchy.

All durations are integer symbol counts.  Conversion to seconds happens
only at reporting boundaries through :func:`symbols_to_seconds`.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterator, Optional, Sequence

import numpy as np

NUM_SUPERFRAME_SLOTS = 16
BASE_SLOT_DURATION = 60
BASE_SUPERFRAME_DURATION = 960
CAP_SLOTS = 8
CFP_SLOTS = 7
EXTENDED_CFP_SLOTS = 15
UNIT_BACKOFF_PERIOD = 20
CCA_TIME = 8
ACK_WAIT_DURATION = 54
TURNAROUND_TIME = 12
SYMBOL_DURATION = 16e-6
DEFAULT_CHANNELS = tuple(range(11, 27))


class ConfigError(ValueError):
    """Invalid configuration or mismatched data structure dimensions."""


def symbols_to_seconds(symbols: float, symbol_duration: float = SYMBOL_DURATION) -> float:
    return symbols * symbol_duration


@dataclass(frozen=True)
class SuperframeConfig:
    so: int = 3
    mo: int = 6
    bo: int = 7
    cap_reduction: bool = False
    symbol_duration: float = SYMBOL_DURATION

    def __post_init__(self):
        if not 0 <= self.so <= 15:
            raise ConfigError(f"so={self.so} outside 0..15")
        if not 0 <= self.mo <= 22 or not 0 <= self.bo <= 22:
            raise ConfigError("mo and bo must lie in 0..22")
        if not self.so <= self.mo <= self.bo:
            raise ConfigError(f"need so <= mo <= bo, got so={self.so} mo={self.mo} bo={self.bo}")
        if self.symbol_duration <= 0:
            raise ConfigError("symbol_duration must be positive")

    @property
    def superframes_per_msf(self) -> int:
        return 1 << (self.mo - self.so)

    @property
    def msf_per_beacon_interval(self) -> int:
        return 1 << (self.bo - self.mo)

    @property
    def beacon_slots(self) -> int:
        """Number of distinct beacon slots, one per superframe of a beacon interval."""
        return 1 << (self.bo - self.so)

    @property
    def max_gts_slots(self) -> int:
        """Largest per-superframe GTS count, used as the SAB slot dimension."""
        if self.cap_reduction and self.mo > self.so:
            return EXTENDED_CFP_SLOTS
        return CFP_SLOTS


@dataclass(frozen=True)
class MacTimingParams:
    min_be: int = 5
    max_be: int = 7
    max_backoffs: int = 4
    max_retries: int = 3
    expiration_threshold: int = 50
    # in units of BASE_SUPERFRAME_DURATION; None derives it from the CSMA settings
    response_wait: Optional[int] = None
    unit_backoff: int = UNIT_BACKOFF_PERIOD
    cca_time: int = CCA_TIME
    ack_wait: int = ACK_WAIT_DURATION

    def __post_init__(self):
        if self.min_be < 0 or self.max_be < 0 or self.min_be > self.max_be:
            raise ConfigError(f"need 0 <= min_be <= max_be, got {self.min_be}, {self.max_be}")
        if self.max_backoffs < 0 or self.max_retries < 0:
            raise ConfigError("max_backoffs and max_retries must be non-negative")
        if self.expiration_threshold <= 0:
            raise ConfigError("expiration_threshold must be positive")
        if self.response_wait is not None and self.response_wait <= 0:
            raise ConfigError("response_wait must be positive")


def slot_duration(config: SuperframeConfig) -> int:
    return BASE_SLOT_DURATION << config.so


def superframe_duration(config: SuperframeConfig) -> int:
    return BASE_SUPERFRAME_DURATION << config.so


def cap_duration(config: SuperframeConfig) -> int:
    return CAP_SLOTS * slot_duration(config)


def multisuperframe_duration(config: SuperframeConfig) -> int:
    return superframe_duration(config) << (config.mo - config.so)


def beacon_interval(config: SuperframeConfig) -> int:
    return superframe_duration(config) << (config.bo - config.so)


def superframe_has_cap(sf_index: int, config: SuperframeConfig) -> bool:
    return sf_index == 0 or not config.cap_reduction


def gts_slots_in_superframe(sf_index: int, config: SuperframeConfig) -> int:
    if not 0 <= sf_index < config.superframes_per_msf:
        raise ConfigError(f"superframe index {sf_index} out of range")
    return CFP_SLOTS if superframe_has_cap(sf_index, config) else EXTENDED_CFP_SLOTS


def gts_per_multisuperframe(config: SuperframeConfig) -> int:
    n = config.superframes_per_msf
    if config.cap_reduction:
        return CFP_SLOTS + EXTENDED_CFP_SLOTS * (n - 1)
    return CFP_SLOTS * n


def cfp_share(config: SuperframeConfig) -> float:
    """Fraction of all slots in a multi-superframe that are GTS slots."""
    return gts_per_multisuperframe(config) / (NUM_SUPERFRAME_SLOTS * config.superframes_per_msf)


def expiration_interval(config: SuperframeConfig, params: MacTimingParams) -> float:
    """Longest packet interval (seconds) that keeps a GTS from expiring."""
    symbols = params.expiration_threshold * multisuperframe_duration(config)
    return symbols_to_seconds(symbols, config.symbol_duration)


def max_initial_backoff(min_be: int) -> int:
    return ((1 << min_be) - 1) * UNIT_BACKOFF_PERIOD


def backoff_window(i: int, min_be: int, max_be: int) -> int:
    """Backoff window in unit periods for the i-th backoff of one attempt."""
    w0 = 1 << min_be
    return w0 << min(i, max_be - min_be)


def max_transaction_time(params: MacTimingParams, payload_symbols: int) -> int:
    """Worst-case symbols of CAP time until a frame of ``payload_symbols`` is delivered."""
    if payload_symbols <= 0:
        raise ConfigError("payload_symbols must be positive")
    backoffs = sum(
        params.unit_backoff * backoff_window(i, params.min_be, params.max_be)
        for i in range(params.max_backoffs + 1)
    )
    return params.max_retries * (backoffs + params.cca_time + payload_symbols + params.ack_wait)


def response_wait_time(params: MacTimingParams, config: SuperframeConfig, payload_symbols: int) -> int:
    """macResponseWaitTime in units of the base superframe duration.

    The worst-case transaction time counts CAP symbols only; every CAP
    occupies half a superframe, so the elapsed time is twice as long.  With
    CAP reduction only one superframe per multi-superframe carries a CAP.
    """
    cap_symbols = max_transaction_time(params, payload_symbols)
    elapsed = cap_symbols * NUM_SUPERFRAME_SLOTS // CAP_SLOTS
    units = -(-elapsed // BASE_SUPERFRAME_DURATION)
    if config.cap_reduction:
        units *= config.superframes_per_msf
    return units


# ---------------------------------------------------------------- slot clock


@dataclass(frozen=True)
class SlotPosition:
    superframe: int  # global superframe counter
    sf_in_msf: int
    slot: int  # 0..15 within the superframe
    gts_index: Optional[int]  # index within the CFP, None outside the CFP
    in_cap: bool


class SlotClock:
    """Maps global symbol time onto the superframe structure.

    Time 0 is the start of the PAN coordinator's first beacon interval.
    """

    def __init__(self, config: SuperframeConfig):
        self.config = config
        self.slot = slot_duration(config)
        self.sd = superframe_duration(config)
        self.nsf = config.superframes_per_msf
        self.msf = multisuperframe_duration(config)
        self.bi = beacon_interval(config)
        self.cap_len = CAP_SLOTS * self.slot

    def has_cap(self, superframe: int) -> bool:
        return not self.config.cap_reduction or superframe % self.nsf == 0

    def position(self, t: int) -> SlotPosition:
        k, off = divmod(t, self.sd)
        s = off // self.slot
        sf_in_msf = k % self.nsf
        if self.has_cap(k):
            in_cap = 1 <= s <= CAP_SLOTS
            gts = s - 1 - CAP_SLOTS if s > CAP_SLOTS else None
        else:
            in_cap = False
            gts = s - 1 if s >= 1 else None
        return SlotPosition(k, sf_in_msf, s, gts, in_cap)

    def in_cap(self, t: int) -> bool:
        k, off = divmod(t, self.sd)
        return self.has_cap(k) and self.slot <= off < (1 + CAP_SLOTS) * self.slot

    def cap_bounds(self, superframe: int) -> tuple[int, int]:
        start = superframe * self.sd + self.slot
        return start, start + self.cap_len

    def cfp_start(self, superframe: int) -> int:
        first = 1 + CAP_SLOTS if self.has_cap(superframe) else 1
        return superframe * self.sd + first * self.slot

    def gts_slot_start(self, superframe: int, gts_index: int) -> int:
        first = 1 + CAP_SLOTS if self.has_cap(superframe) else 1
        return superframe * self.sd + (first + gts_index) * self.slot

    def gts_count(self, superframe: int) -> int:
        return CFP_SLOTS if self.has_cap(superframe) else EXTENDED_CFP_SLOTS

    def next_cap_superframe(self, superframe: int) -> int:
        """Smallest superframe index >= ``superframe`` that carries a CAP."""
        if not self.config.cap_reduction:
            return superframe
        return -(-superframe // self.nsf) * self.nsf

    def cap_advance(self, t: int, delay: int, needed: int) -> int:
        """Time at which a CAP countdown of ``delay`` symbols started at ``t`` expires.

        The countdown only runs inside the part of each CAP where an action
        of length ``needed`` still completes before the CAP ends; it is
        suspended across the CFP, the beacon slot and skipped CAPs.
        """
        if needed > self.cap_len:
            raise ConfigError(f"{needed} symbols never fit into a CAP of {self.cap_len}")
        k = self.next_cap_superframe(t // self.sd)
        while True:
            ws, ce = self.cap_bounds(k)
            we = ce - needed
            if t < ws:
                t = ws
            if t <= we:
                if t + delay <= we:
                    return t + delay
                delay -= we - t
            k = self.next_cap_superframe(k + 1)
            t = k * self.sd


# ------------------------------------------------------------------- GTS data


class Direction(enum.Enum):
    TX = "TX"
    RX = "RX"

    @property
    def opposite(self) -> "Direction":
        return Direction.RX if self is Direction.TX else Direction.TX


@dataclass(frozen=True)
class GtsDescriptor:
    superframe: int
    slot: int
    channel: int
    direction: Direction
    peer: int

    @property
    def key(self) -> tuple[int, int]:
        return (self.superframe, self.slot)

    def check(self, config: SuperframeConfig) -> None:
        if not 0 <= self.slot < gts_slots_in_superframe(self.superframe, config):
            raise ConfigError(f"slot {self.slot} invalid in superframe {self.superframe}")


class SlotAllocationBitmap:
    """Busy bits over (superframe, slot, channel) of one multi-superframe."""

    __slots__ = ("config", "channels", "bits", "_chan_index")

    def __init__(self, config: SuperframeConfig, channels: Sequence[int] = DEFAULT_CHANNELS, bits=None):
        self.config = config
        self.channels = tuple(channels)
        if not self.channels:
            raise ConfigError("channel set must not be empty")
        self._chan_index = {c: i for i, c in enumerate(self.channels)}
        shape = (config.superframes_per_msf, config.max_gts_slots, len(self.channels))
        if bits is None:
            bits = np.zeros(shape, dtype=bool)
        elif bits.shape != shape:
            raise ConfigError(f"bitmap shape {bits.shape} != {shape}")
        self.bits = bits

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.bits.shape

    def copy(self) -> "SlotAllocationBitmap":
        return SlotAllocationBitmap(self.config, self.channels, self.bits.copy())

    def channel_index(self, channel: int) -> int:
        try:
            return self._chan_index[channel]
        except KeyError:
            raise ConfigError(f"channel {channel} not in channel set") from None

    def is_busy(self, sf: int, slot: int, channel: int) -> bool:
        return bool(self.bits[sf, slot, self.channel_index(channel)])

    def mark(self, sf: int, slot: int, channel: Optional[int] = None, own: bool = False) -> None:
        """Set a busy bit; ``own`` slots block every channel of that time slot."""
        if own or channel is None:
            self.bits[sf, slot, :] = True
        else:
            self.bits[sf, slot, self.channel_index(channel)] = True

    def clear(self, sf: int, slot: int, channel: Optional[int] = None, own: bool = False) -> None:
        if own or channel is None:
            self.bits[sf, slot, :] = False
        else:
            self.bits[sf, slot, self.channel_index(channel)] = False

    def merge(self, other: "SlotAllocationBitmap") -> "SlotAllocationBitmap":
        if self.bits.shape != other.bits.shape or self.channels != other.channels:
            raise ConfigError("cannot merge bitmaps of different dimensions")
        return SlotAllocationBitmap(self.config, self.channels, self.bits | other.bits)

    __or__ = merge

    def count(self) -> int:
        return int(self.bits.sum())

    def __eq__(self, other) -> bool:
        if not isinstance(other, SlotAllocationBitmap):
            return NotImplemented
        return self.channels == other.channels and np.array_equal(self.bits, other.bits)

    def __repr__(self) -> str:
        return f"SlotAllocationBitmap(shape={self.shape}, busy={self.count()})"


def sab_mark(sab: SlotAllocationBitmap, sf: int, slot: int, channel: Optional[int] = None, own: bool = False):
    out = sab.copy()
    out.mark(sf, slot, channel, own)
    return out


def sab_clear(sab: SlotAllocationBitmap, sf: int, slot: int, channel: Optional[int] = None, own: bool = False):
    out = sab.copy()
    out.clear(sf, slot, channel, own)
    return out


def sab_merge(a: SlotAllocationBitmap, b: SlotAllocationBitmap) -> SlotAllocationBitmap:
    return a.merge(b)


def valid_slots(config: SuperframeConfig) -> Iterator[tuple[int, int]]:
    for sf in range(config.superframes_per_msf):
        for slot in range(gts_slots_in_superframe(sf, config)):
            yield sf, slot


def first_free_slot(
    sab: SlotAllocationBitmap, preferred: Optional[tuple[int, int]] = None
) -> Optional[tuple[int, int, int]]:
    """Pick a free (superframe, slot, channel), honoring ``preferred`` if usable.

    Falls back to ascending (superframe, slot, channel) order.  Returns None
    when every valid cell is busy.
    """
    config = sab.config
    bits = sab.bits
    if preferred is not None:
        sf, slot = preferred
        if 0 <= sf < config.superframes_per_msf and 0 <= slot < gts_slots_in_superframe(sf, config):
            free = np.flatnonzero(~bits[sf, slot])
            if free.size:
                return sf, slot, sab.channels[int(free[0])]
    for sf in range(config.superframes_per_msf):
        n = gts_slots_in_superframe(sf, config)
        free = np.argwhere(~bits[sf, :n])
        if free.size:
            slot, ci = free[0]
            return sf, int(slot), sab.channels[int(ci)]
    return None


class ActState(enum.Enum):
    VALID = "VALID"
    UNCONFIRMED = "UNCONFIRMED"
    DEALLOCATING = "DEALLOCATING"


@dataclass
class ActEntry:
    descriptor: GtsDescriptor
    state: ActState = ActState.VALID
    idle_counter: int = 0
    created: int = 0
    # usage seen during the current multi-superframe
    rx_seen: bool = False
    tx_ok: bool = False

    @property
    def key(self) -> tuple[int, int]:
        return self.descriptor.key


@dataclass
class AllocationCounterTable:
    """A node's own GTS, at most one per (superframe, slot)."""

    entries: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(list(self.entries.values()))

    def __contains__(self, key) -> bool:
        return key in self.entries

    def get(self, sf: int, slot: int) -> Optional[ActEntry]:
        return self.entries.get((sf, slot))

    def add(self, entry: ActEntry) -> ActEntry:
        if entry.key in self.entries:
            raise ConfigError(f"time slot {entry.key} already allocated")
        self.entries[entry.key] = entry
        return entry

    def remove(self, sf: int, slot: int) -> Optional[ActEntry]:
        return self.entries.pop((sf, slot), None)

    def links(self, peer: int, direction: Optional[Direction] = None, states=(ActState.VALID,)):
        return [
            e
            for e in self.entries.values()
            if e.descriptor.peer == peer
            and e.state in states
            and (direction is None or e.descriptor.direction is direction)
        ]

    def expire(self, threshold: int) -> list[ActEntry]:
        """Entries whose idle counter reached ``threshold``."""
        return [e for e in self.entries.values() if e.idle_counter >= threshold]

