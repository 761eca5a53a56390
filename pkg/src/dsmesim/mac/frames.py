"""MAC frame model.  Frames are Python objects; only their airtime matters."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Any, Optional

BROADCAST = -1
PHY_OVERHEAD_OCTETS = 6  # preamble, SFD and PHY header
SYMBOLS_PER_OCTET = 2


class FrameKind(enum.Enum):
    ENHANCED_BEACON = "beacon"
    BEACON_ALLOC_NOTIFICATION = "beacon_alloc"
    BEACON_COLLISION_NOTIFICATION = "beacon_collision"
    BEACON_REQUEST = "beacon_request"
    ASSOCIATION_REQUEST = "assoc_request"
    ASSOCIATION_RESPONSE = "assoc_response"
    GTS_REQUEST = "gts_request"
    GTS_RESPONSE = "gts_response"
    GTS_NOTIFY = "gts_notify"
    DATA = "data"
    ACK = "ack"


class MgmtType(enum.Enum):
    ALLOCATION = "alloc"
    DEALLOCATION = "dealloc"
    DUPLICATE_ALLOCATION_NOTIFICATION = "dup"


class Status(enum.Enum):
    SUCCESS = "success"
    DENIED = "denied"


# PSDU sizes in octets; data frames carry the full 127-byte payload
PSDU_OCTETS = {
    FrameKind.ENHANCED_BEACON: 40,
    FrameKind.BEACON_ALLOC_NOTIFICATION: 14,
    FrameKind.BEACON_COLLISION_NOTIFICATION: 14,
    FrameKind.BEACON_REQUEST: 10,
    FrameKind.ASSOCIATION_REQUEST: 20,
    FrameKind.ASSOCIATION_RESPONSE: 20,
    FrameKind.GTS_REQUEST: 44,
    FrameKind.GTS_RESPONSE: 30,
    FrameKind.GTS_NOTIFY: 30,
    FrameKind.DATA: 127,
    FrameKind.ACK: 5,
}


def airtime(psdu_octets: int) -> int:
    return (PHY_OVERHEAD_OCTETS + psdu_octets) * SYMBOLS_PER_OCTET


AIRTIME = {kind: airtime(n) for kind, n in PSDU_OCTETS.items()}
ACK_AIRTIME = AIRTIME[FrameKind.ACK]


@dataclass
class Packet:
    """Network-layer payload carried end to end."""

    origin: int
    seq: int
    created: int
    phase: str  # warmup, measure or cooldown
    dest: int = 0
    hops: int = 0
    # node currently responsible for the packet
    holder: int = -1


@dataclass
class Frame:
    kind: FrameKind
    src: int
    dst: int
    dsn: int = 0
    payload: Any = None
    # the intended peer of a broadcast GTS response or notify
    target: Optional[int] = None
    # set for CFP data sent on a descriptor both sides hold as VALID
    gts_valid: bool = False
    # sender is associated, so it may be used as a next hop
    joined: bool = False

    @property
    def airtime(self) -> int:
        return AIRTIME[self.kind]

    @property
    def broadcast(self) -> bool:
        return self.dst == BROADCAST

    @property
    def needs_ack(self) -> bool:
        return not self.broadcast and self.kind is not FrameKind.ACK
