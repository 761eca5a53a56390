"""Always-on unslotted CSMA/CA MAC used as the comparison baseline."""

from __future__ import annotations

import random
from dataclasses import dataclass, field

from ..schedule import TURNAROUND_TIME, MacTimingParams
from .csma import CsmaResult, CsmaTransmitter
from .frames import Frame, FrameKind, Packet


def tuned_csma_params() -> MacTimingParams:
    """Retry and backoff limits that worked best for the convergecast scenario."""
    return MacTimingParams(min_be=7, max_be=7, max_backoffs=5, max_retries=7)


@dataclass(frozen=True)
class CsmaSettings:
    params: MacTimingParams = field(default_factory=tuned_csma_params)
    queue_capacity: int = 30
    channel: int = 11


class CsmaNode:
    """Per-neighbour queues of capacity K served in arrival order."""

    def __init__(self, node_id: int, net, settings: CsmaSettings, rng: random.Random):
        self.id = node_id
        self.net = net
        self.loop = net.loop
        self.medium = net.medium
        self.log = net.log
        self.s = settings
        self.rng = rng
        self.csma = CsmaTransmitter(self, settings.params, rng, lambda: settings.channel)
        self.per_neighbor: dict = {}
        self.dsn = rng.randrange(1 << 16)
        self.last_dsn: dict = {}
        self.neighbors: dict = {}
        self.blacklist: set = set()
        self.radio_on = 0
        self.associated = True

    def busy_transmitting(self) -> bool:
        return self.medium.transmitting(self.id, self.loop.now)

    def transmit(self, frame: Frame, channel: int) -> int:
        return self.medium.transmit(self.id, channel, frame)

    def on_cca(self, t: int) -> None:
        pass

    def rx_channel(self, t: int) -> int:
        return self.s.channel

    def on_superframe(self, k: int, t: int) -> None:
        pass

    def enqueue(self, packet: Packet, next_hop: int) -> bool:
        n = self.per_neighbor.get(next_hop, 0)
        if n >= self.s.queue_capacity:
            return False
        self.per_neighbor[next_hop] = n + 1
        self.dsn = (self.dsn + 1) & 0xFFFF
        frame = Frame(FrameKind.DATA, self.id, next_hop, self.dsn, packet, joined=True)
        self.csma.send(frame, self._done)
        return True

    def csma_baseline_send(self, packet: Packet, next_hop: int) -> bool:
        return self.enqueue(packet, next_hop)

    def queued(self) -> int:
        return len(self.csma)

    def _done(self, frame: Frame, result: CsmaResult) -> None:
        self.per_neighbor[frame.dst] -= 1
        if result is CsmaResult.SUCCESS:
            self.net.forwarded(self.id, frame.dst, frame.payload)
        else:
            self.net.mac_drop(self.id, frame.payload, result.value)

    def receive(self, frame: Frame, channel: int, t: int) -> None:
        if frame.kind is FrameKind.ACK:
            if frame.dst == self.id:
                self.csma.on_ack(frame)
            return
        if frame.dst != self.id:
            return
        ack = Frame(FrameKind.ACK, self.id, frame.src, frame.dsn)
        self.loop.after(TURNAROUND_TIME, self._transmit_ack, ack, channel)
        if self.last_dsn.get(frame.src) == frame.dsn:
            return
        self.last_dsn[frame.src] = frame.dsn
        if frame.kind is FrameKind.DATA:
            self.net.deliver(self.id, frame.src, frame.payload)

    def rx_failed(self, frame: Frame, channel: int, t: int) -> None:
        pass

    def _transmit_ack(self, ack: Frame, channel: int) -> None:
        if not self.busy_transmitting():
            self.transmit(ack, channel)

    def remove_neighbor(self, peer: int) -> None:
        self.blacklist.add(peer)
        self.neighbors.pop(peer, None)
