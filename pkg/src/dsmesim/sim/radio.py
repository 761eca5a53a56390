"""Range-based multi-channel radio medium.

A frame reaches a receiver that is within communication range, tuned to
the frame's channel when it starts, and not hit by any other frame on that
channel from a sender within interference range while it lasts.  There is
no capture: overlapping frames are both lost.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from ..mac.frames import Frame


class Reception:
    __slots__ = ("node", "end", "ok", "tx")

    def __init__(self, node: int, end: int, ok: bool, tx=None):
        self.node = node
        self.end = end
        self.ok = ok
        self.tx = tx


@dataclass
class Transmission:
    sender: int
    channel: int
    start: int
    end: int
    frame: Frame
    receptions: list = field(default_factory=list)


class RadioMedium:
    def __init__(
        self,
        loop,
        positions: np.ndarray,
        comm_range: float,
        interference_range: Optional[float] = None,
        links: Optional[Sequence[tuple[int, int]]] = None,
    ):
        self.loop = loop
        self.positions = np.asarray(positions, dtype=float)
        n = len(self.positions)
        self.comm_range = comm_range
        self.interference_range = comm_range if interference_range is None else interference_range
        if self.interference_range < comm_range:
            raise ValueError("interference range must be at least the communication range")
        diff = self.positions[:, None, :] - self.positions[None, :, :]
        dist = np.sqrt((diff**2).sum(-1))
        self.distance = dist
        eye = np.eye(n, dtype=bool)
        if links is None:
            comm = (dist <= comm_range) & ~eye
            intf = (dist <= self.interference_range) & ~eye
        else:
            comm = np.zeros((n, n), dtype=bool)
            for a, b in links:
                comm[a, b] = comm[b, a] = True
            intf = comm | ((dist <= self.interference_range) & ~eye & (interference_range is not None))
        self.comm = [tuple(int(j) for j in np.flatnonzero(comm[i])) for i in range(n)]
        self.comm_sets = [frozenset(c) for c in self.comm]
        self.intf_sets = [frozenset(int(j) for j in np.flatnonzero(intf[i])) for i in range(n)]
        self.nodes: list = []
        self.active: dict = defaultdict(list)
        self.tx_until = [0] * n
        self.current_rx: list = [None] * n
        self.blocked: set = set()
        self.on_collision: Optional[Callable] = None
        self.frames_sent = 0

    @property
    def n(self) -> int:
        return len(self.positions)

    def attach(self, nodes: Sequence) -> None:
        self.nodes = list(nodes)

    def block(self, a: int, b: int) -> None:
        self.blocked.add((a, b))
        self.blocked.add((b, a))

    def neighbors(self, i: int) -> tuple:
        return tuple(j for j in self.comm[i] if (i, j) not in self.blocked)

    def _ongoing(self, channel: int, t: int) -> list:
        lst = self.active[channel]
        if lst and any(a.end <= t for a in lst):
            lst[:] = [a for a in lst if a.end > t]
        return lst

    def busy(self, node: int, channel: int, t: int) -> bool:
        """Carrier sense: energy from any frame on ``channel`` within range."""
        cs = self.comm_sets[node]
        return any(a.start <= t and a.sender in cs for a in self._ongoing(channel, t))

    def transmitting(self, node: int, t: int) -> bool:
        return self.tx_until[node] > t

    def transmit(self, sender: int, channel: int, frame: Frame) -> int:
        t = self.loop.now
        end = t + frame.airtime
        if self.tx_until[sender] > t:
            raise RuntimeError(f"node {sender} starts a frame while still transmitting")
        self.frames_sent += 1
        self.tx_until[sender] = end
        tx = Transmission(sender, channel, t, end, frame)
        own = self.current_rx[sender]
        if own is not None and own.end > t and own.ok:
            own.ok = False
        ongoing = self._ongoing(channel, t)
        near = self.intf_sets[sender]
        for other in ongoing:
            for rec in other.receptions:
                if rec.ok and rec.node in near:
                    rec.ok = False
                    self._collision(other, tx, rec.node)
        nodes = self.nodes
        blocked = self.blocked
        for r in self.comm[sender]:
            if blocked and (sender, r) in blocked:
                continue
            if self.tx_until[r] > t or nodes[r].rx_channel(t) != channel:
                continue
            ok = True
            cur = self.current_rx[r]
            if cur is not None and cur.end > t:
                ok = False
                if cur.tx is not None and cur.tx.channel == channel:
                    self._collision(tx, cur.tx, r)
            else:
                intf = self.intf_sets[r]
                for other in ongoing:
                    if other.sender in intf:
                        ok = False
                        self._collision(tx, other, r)
                        break
            rec = Reception(r, end, ok, tx)
            self.current_rx[r] = rec
            tx.receptions.append(rec)
        ongoing.append(tx)
        self.loop.at(end, self._finish, tx)
        return end

    def _collision(self, victim: Transmission, other: Transmission, receiver: int) -> None:
        if self.on_collision is not None:
            self.on_collision(victim, other, receiver)

    def _finish(self, tx: Transmission) -> None:
        t = self.loop.now
        for rec in tx.receptions:
            if self.current_rx[rec.node] is rec:
                self.current_rx[rec.node] = None
            node = self.nodes[rec.node]
            if rec.ok:
                node.receive(tx.frame, tx.channel, t)
            else:
                node.rx_failed(tx.frame, tx.channel, t)
