"""Per-node DSME MAC: formation, beacons, CAP management traffic and GTS data."""

from __future__ import annotations

import enum
import random
from collections import deque
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..schedule import (
    ACK_WAIT_DURATION,
    BASE_SUPERFRAME_DURATION,
    DEFAULT_CHANNELS,
    TURNAROUND_TIME,
    ActEntry,
    ActState,
    AllocationCounterTable,
    ConfigError,
    Direction,
    GtsDescriptor,
    MacTimingParams,
    SlotAllocationBitmap,
    SlotClock,
    SuperframeConfig,
    first_free_slot,
    response_wait_time,
)
from ..scheduler import Intent, LinkScheduler, TrafficEstimate, pick_victim
from .csma import CsmaResult, CsmaTransmitter
from .frames import ACK_AIRTIME, AIRTIME, BROADCAST, Frame, FrameKind, MgmtType, Packet, Status


class Phase(enum.IntEnum):
    UNSYNCED_PASSIVE_SCAN = 0
    UNSYNCED_ACTIVE_SCAN = 1
    SYNCED = 2
    ASSOCIATED = 3
    COORDINATOR = 4


@dataclass(frozen=True)
class DsmeSettings:
    config: SuperframeConfig = field(default_factory=lambda: SuperframeConfig(3, 6, 7, True))
    params: MacTimingParams = field(default_factory=MacTimingParams)
    channels: tuple = DEFAULT_CHANNELS
    common_channel: int = 11
    alpha: float = 0.05
    hysteresis: bool = True
    depreciation_threshold: int = 50
    queue_capacity: int = 30
    election_probability: float = 1 / 3
    election_threshold: int = 2
    lease_msf: Optional[int] = 512
    max_drift_ppm: float = 10.0
    guard_symbols: int = 320
    scan_budget_bi: int = 1
    # payload size used to derive the handshake response wait
    response_wait_payload: int = 50

    def __post_init__(self):
        slot = 60 << self.config.so
        if slot < AIRTIME[FrameKind.DATA] + TURNAROUND_TIME + ACK_AIRTIME:
            raise ConfigError(f"so={self.config.so}: a data frame and its ACK do not fit into one slot")
        if self.common_channel not in self.channels:
            raise ConfigError("common channel must be one of the channels")


@dataclass
class BeaconInfo:
    slot: int
    bitmap: np.ndarray
    ancestors: tuple


@dataclass
class GtsCommand:
    mgmt: MgmtType
    descriptor: Optional[GtsDescriptor] = None  # from the sender's point of view
    sab: Optional[SlotAllocationBitmap] = None
    preferred: tuple = (0, 0)
    count: int = 1
    status: Status = Status.SUCCESS
    direction: Direction = Direction.TX


@dataclass
class Handshake:
    mgmt: MgmtType
    peer: int
    key: Optional[tuple] = None
    timer: object = None
    from_scheduler: bool = False


class DsmeNode:
    def __init__(self, node_id: int, net, settings: DsmeSettings, rng: random.Random, pan_coordinator: bool = False):
        self.id = node_id
        self.net = net
        self.loop = net.loop
        self.medium = net.medium
        self.log = net.log
        self.s = settings
        self.cfg = settings.config
        self.clock: SlotClock = net.clock
        self.rng = rng
        self.pan = pan_coordinator
        nbs = self.cfg.beacon_slots
        self.phase = Phase.UNSYNCED_PASSIVE_SCAN
        self.sync_parent: Optional[int] = None
        self.ancestors: tuple = ()
        self.beacon_slot: Optional[int] = None
        self.neighbor_beacon_bitmap = np.zeros(nbs, dtype=bool)  # own + direct neighbours, advertised
        self.beacon_union = np.zeros(nbs, dtype=bool)  # also two-hop knowledge, used for selection
        self.coordinators_heard: dict = {}
        self.sab = SlotAllocationBitmap(self.cfg, settings.channels)  # bits learned from neighbours
        self.stale = np.zeros_like(self.sab.bits)
        self.holders: dict = {}  # heard cell -> links known to hold it
        self.act = AllocationCounterTable()
        self._by_sf: Optional[dict] = None
        self.tx_queues: dict = {}
        self.links: dict = {}
        self.neighbors: dict = {}
        self.blacklist: set = set()
        self.hs_alloc: dict = {}
        self.hs_dealloc: dict = {}
        self.csma = CsmaTransmitter(self, settings.params, rng, self._cap_channel, self._cap_advance)
        self.dsn = rng.randrange(1 << 16)
        self.last_dsn: dict = {}
        self.drift_ppm = rng.uniform(-settings.max_drift_ppm, settings.max_drift_ppm)
        self.last_sync = 0
        self.radio_on = 0
        self.cfp_wait: Optional[tuple] = None
        self.associating = False
        self.acquiring = False
        self.response_wait = (
            response_wait_time(settings.params, self.cfg, settings.response_wait_payload) * BASE_SUPERFRAME_DURATION
        )
        self.scan_started = 0
        self.beacon_reply_bi = -1
        self.collision_reported: dict = {}
        if pan_coordinator:
            self.phase = Phase.COORDINATOR
            self.beacon_slot = 0
            self.neighbor_beacon_bitmap[0] = True
            self.beacon_union[0] = True
        else:
            self._start_scan(Phase.UNSYNCED_PASSIVE_SCAN)

    # ------------------------------------------------------------ plumbing

    @property
    def synced(self) -> bool:
        return self.phase >= Phase.SYNCED

    @property
    def associated(self) -> bool:
        return self.phase >= Phase.ASSOCIATED

    def _cap_channel(self) -> int:
        return self.s.common_channel

    def _cap_advance(self, t: int, delay: int, needed: int) -> int:
        if not self.synced:
            return t + delay
        return self.clock.cap_advance(t, delay, needed)

    def _next_dsn(self) -> int:
        self.dsn = (self.dsn + 1) & 0xFFFF
        return self.dsn

    def _frame(self, kind: FrameKind, dst: int, payload=None, target=None) -> Frame:
        frame = Frame(kind, self.id, dst, self._next_dsn(), payload, target)
        frame.joined = self.associated
        return frame

    def busy_transmitting(self) -> bool:
        return self.medium.transmitting(self.id, self.loop.now)

    def transmit(self, frame: Frame, channel: int) -> int:
        return self.medium.transmit(self.id, channel, frame)

    def on_cca(self, t: int) -> None:
        if self.synced and not self.clock.in_cap(t):
            self.net.cap_violation(self.id, t)

    def rx_channel(self, t: int) -> Optional[int]:
        if not self.synced:
            return self.s.common_channel
        pos = self.clock.position(t)
        if pos.slot == 0 or pos.in_cap:
            return self.s.common_channel
        if pos.gts_index is None:
            return None
        entry = self.act.entries.get((pos.sf_in_msf, pos.gts_index))
        return entry.descriptor.channel if entry is not None else None

    def _act_changed(self) -> None:
        self._by_sf = None

    def _entries_in(self, sf_in_msf: int) -> list:
        if self._by_sf is None:
            by: dict = {}
            for e in self.act.entries.values():
                by.setdefault(e.descriptor.superframe, []).append(e)
            for lst in by.values():
                lst.sort(key=lambda e: e.descriptor.slot)
            self._by_sf = by
        return self._by_sf.get(sf_in_msf, ())

    def full_sab(self) -> SlotAllocationBitmap:
        """Heard reservations plus every channel of the node's own slots."""
        sab = self.sab.copy()
        for (sf, slot) in self.act.entries:
            sab.bits[sf, slot, :] = True
        return sab

    def _mark_heard(self, d: GtsDescriptor, holder) -> None:
        ci = self.sab.channel_index(d.channel)
        self.sab.bits[d.superframe, d.slot, ci] = True
        self.stale[d.superframe, d.slot, ci] = False
        self.holders.setdefault((d.superframe, d.slot, ci), set()).add(holder)

    def _clear_heard(self, d: GtsDescriptor, holder) -> None:
        """Forget one holder of a cell; the bit clears once nobody is known to hold it."""
        cell = (d.superframe, d.slot, self.sab.channel_index(d.channel))
        held = self.holders.get(cell)
        if held is None:
            return
        held.discard(holder)
        self.stale[cell] = False
        if not held:
            del self.holders[cell]
            self.sab.bits[cell] = False

    # ------------------------------------------------------------ formation

    def _start_scan(self, phase: Phase) -> None:
        self.phase = phase
        self.scan_started = self.loop.now
        budget = self.s.scan_budget_bi * self.clock.bi
        self.loop.at(self.loop.now + budget, self._scan_timeout, self.scan_started)

    def _scan_timeout(self, started: int) -> None:
        if self.synced or started != self.scan_started:
            return
        self.log.emit(self.loop.now, self.id, "active_scan")
        self.csma.send(self._frame(FrameKind.BEACON_REQUEST, BROADCAST))
        self._start_scan(Phase.UNSYNCED_ACTIVE_SCAN)

    def _on_beacon(self, frame: Frame, t: int) -> None:
        info: BeaconInfo = frame.payload
        self.coordinators_heard[frame.src] = t
        self.neighbor_beacon_bitmap[info.slot] = True
        self.beacon_union |= info.bitmap
        self.beacon_union[info.slot] = True
        if frame.src == self.sync_parent:
            self.last_sync = t
        if not self.synced and self.id not in info.ancestors:
            # the first usable beacon ends the scan
            self.sync_parent = frame.src
            self.ancestors = info.ancestors + (frame.src,)
            self.phase = Phase.SYNCED
            self.last_sync = t
            self.log.emit(t, self.id, "synced", parent=frame.src)
            # pending active-scan requests were timed without the CAP
            self.csma.abort_all()
            self._associate()

    def _associate(self) -> None:
        if self.associating or self.phase != Phase.SYNCED:
            return
        self.associating = True
        self.csma.send(self._frame(FrameKind.ASSOCIATION_REQUEST, self.sync_parent), self._assoc_sent)

    def _assoc_sent(self, frame: Frame, result: CsmaResult) -> None:
        if result is not CsmaResult.SUCCESS:
            self.associating = False
            return
        self.loop.at(self.loop.now + self.response_wait, self._assoc_timeout)

    def _assoc_timeout(self) -> None:
        if self.phase == Phase.SYNCED:
            self.associating = False

    def _on_assoc_request(self, frame: Frame) -> None:
        if self.associated:
            self.csma.send(self._frame(FrameKind.ASSOCIATION_RESPONSE, frame.src, Status.SUCCESS))

    def _on_assoc_response(self, frame: Frame, t: int) -> None:
        if self.phase != Phase.SYNCED or frame.src != self.sync_parent:
            return
        self.associating = False
        self.phase = Phase.ASSOCIATED
        self.neighbors[frame.src] = self.net.positions[frame.src]
        self.log.emit(t, self.id, "associated", parent=frame.src)
        self.net.on_associated(self.id, t)

    def _election_tick(self, t: int) -> None:
        if self.phase != Phase.ASSOCIATED or self.acquiring:
            return
        horizon = 2 * self.clock.bi
        heard = sum(1 for s, last in self.coordinators_heard.items() if t - last <= horizon)
        if heard < self.s.election_threshold and self.rng.random() < self.s.election_probability:
            self.beacon_slot_acquire()

    def beacon_slot_acquire(self) -> None:
        if self.phase != Phase.ASSOCIATED or self.acquiring:
            return
        free = np.flatnonzero(~self.beacon_union)
        if len(free) == 0:
            self.log.emit(self.loop.now, self.id, "beacon_slot_exhausted")
            return
        slot = int(free[0])
        self.acquiring = True
        frame = self._frame(FrameKind.BEACON_ALLOC_NOTIFICATION, BROADCAST, slot)
        self.csma.send(frame, lambda f, r: self._beacon_alloc_sent(slot, r))

    def _beacon_alloc_sent(self, slot: int, result: CsmaResult) -> None:
        self.acquiring = False
        if result is not CsmaResult.SUCCESS or self.phase != Phase.ASSOCIATED or self.beacon_union[slot]:
            return
        self.phase = Phase.COORDINATOR
        self.beacon_slot = slot
        self.neighbor_beacon_bitmap[slot] = True
        self.beacon_union[slot] = True
        self.log.emit(self.loop.now, self.id, "coordinator", slot=slot)
        self.net.on_coordinator(self.id, self.loop.now)

    def _on_beacon_alloc(self, frame: Frame) -> None:
        slot = frame.payload
        taken = self.beacon_slot == slot or self.neighbor_beacon_bitmap[slot]
        if taken and self.synced:
            self.csma.send(self._frame(FrameKind.BEACON_COLLISION_NOTIFICATION, frame.src, slot))
        else:
            self.neighbor_beacon_bitmap[slot] = True
            self.beacon_union[slot] = True

    def _on_beacon_collision(self, frame: Frame) -> None:
        slot = frame.payload
        self.beacon_union[slot] = True
        # a broadcast report names the coordinator that keeps the slot as target
        if self.phase == Phase.COORDINATOR and self.beacon_slot == slot and not self.pan and frame.target != self.id:
            self.log.emit(self.loop.now, self.id, "beacon_collision", slot=slot)
            self.phase = Phase.ASSOCIATED
            self.beacon_slot = None
            self.beacon_slot_acquire()

    def _on_beacon_request(self, frame: Frame) -> None:
        if self.phase == Phase.ASSOCIATED:
            self.beacon_slot_acquire()
        elif self.phase == Phase.COORDINATOR and not frame.joined:
            # answer in the CAP so a scanner caught between colliding beacons can still sync
            bi = self.loop.now // self.clock.bi
            if self.beacon_reply_bi != bi:
                self.beacon_reply_bi = bi
                info = BeaconInfo(self.beacon_slot, self.neighbor_beacon_bitmap.copy(), self.ancestors)
                self.csma.send(self._frame(FrameKind.ENHANCED_BEACON, BROADCAST, info))

    def _beacon_slot_garbled(self, t: int) -> None:
        k = t // self.clock.sd
        slot = k % self.cfg.beacon_slots
        bi = t // self.clock.bi
        if slot == self.beacon_slot or self.collision_reported.get(slot) == bi:
            return
        self.collision_reported[slot] = bi
        self.log.emit(t, self.id, "beacon_garbled", slot=slot)
        self.csma.send(self._frame(FrameKind.BEACON_COLLISION_NOTIFICATION, BROADCAST, slot, target=self.sync_parent))

    def _send_beacon(self) -> None:
        bitmap = self.neighbor_beacon_bitmap.copy()
        info = BeaconInfo(self.beacon_slot, bitmap, self.ancestors)
        self.transmit(self._frame(FrameKind.ENHANCED_BEACON, BROADCAST, info), self.s.common_channel)

    def _lose_sync(self, t: int) -> None:
        self.log.emit(t, self.id, "sync_lost", parent=self.sync_parent)
        self.csma.abort_all()
        for e in list(self.act):
            self.act.remove(*e.key)
        self._act_changed()
        for hs in list(self.hs_alloc.values()) + list(self.hs_dealloc.values()):
            if hs.timer:
                hs.timer.cancel()
        self.hs_alloc.clear()
        self.hs_dealloc.clear()
        for link in self.links.values():
            link.handshake_done()
        self.sync_parent = None
        self.ancestors = ()
        self.beacon_slot = None
        self.associating = False
        self.net.on_desync(self.id, t)
        self._start_scan(Phase.UNSYNCED_PASSIVE_SCAN)

    # ------------------------------------------------------------ superframe

    def on_superframe(self, k: int, t: int) -> None:
        clock = self.clock
        if not self.synced:
            self.radio_on += clock.sd
            return
        if not self.pan and self.sync_parent is not None:
            if (t - self.last_sync) * abs(self.drift_ppm) * 1e-6 > self.s.guard_symbols:
                self._lose_sync(t)
                self.radio_on += clock.sd
                return
        sf = k % clock.nsf
        self.radio_on += clock.slot
        if clock.has_cap(k):
            self.radio_on += clock.cap_len
        if self.phase == Phase.COORDINATOR and k % self.cfg.beacon_slots == self.beacon_slot:
            self._send_beacon()
        if sf == 0:
            if self.phase == Phase.SYNCED:
                self._associate()
            self._on_msf(k // clock.nsf, t)
        for e in self._entries_in(sf):
            d = e.descriptor
            if d.direction is Direction.RX:
                self.radio_on += clock.slot
            elif e.state is ActState.VALID:
                self.loop.at(clock.gts_slot_start(k, d.slot), self._gts_tx, e)

    def _on_msf(self, msf: int, t: int) -> None:
        self._expiration_tick()
        self._scheduler_tick(t)
        if self.s.lease_msf and msf > 0 and msf % self.s.lease_msf == 0:
            self.stale_slot_lease_tick()
        if msf % self.cfg.msf_per_beacon_interval == 0:
            self._election_tick(t)

    # ------------------------------------------------------------ data path

    def enqueue(self, packet: Packet, next_hop: int) -> bool:
        link = self.links.get(next_hop)
        if link is None:
            est = TrafficEstimate(self.s.alpha, self.s.depreciation_threshold, self.s.hysteresis)
            link = self.links[next_hop] = LinkScheduler(est)
        link.record_enqueue()
        q = self.tx_queues.setdefault(next_hop, deque())
        if len(q) >= self.s.queue_capacity:
            return False
        q.append([packet, 0, None])  # packet, retries, dsn reused on retransmission
        return True

    def queued(self) -> int:
        return sum(len(q) for q in self.tx_queues.values())

    def _gts_tx(self, entry: ActEntry) -> None:
        d = entry.descriptor
        if self.act.entries.get(entry.key) is not entry or entry.state is not ActState.VALID:
            return
        q = self.tx_queues.get(d.peer)
        if not q or self.busy_transmitting():
            return
        item = q[0]
        if item[2] is None:
            item[2] = self._next_dsn()
        frame = Frame(FrameKind.DATA, self.id, d.peer, item[2], item[0], gts_valid=True, joined=self.associated)
        end = self.transmit(frame, d.channel)
        self.radio_on += frame.airtime + ACK_WAIT_DURATION
        self.cfp_wait = (d.peer, frame.dsn, entry)
        self.loop.at(end + ACK_WAIT_DURATION, self._gts_ack_timeout, entry, frame.dsn)

    def _gts_ack(self, ack: Frame) -> bool:
        if self.cfp_wait is None:
            return False
        peer, dsn, entry = self.cfp_wait
        if ack.src != peer or ack.dsn != dsn:
            return False
        self.cfp_wait = None
        entry.tx_ok = True
        q = self.tx_queues[peer]
        packet = q.popleft()[0]
        self.net.forwarded(self.id, peer, packet)
        return True

    def _gts_ack_timeout(self, entry: ActEntry, dsn: int) -> None:
        if self.cfp_wait is None or self.cfp_wait[1] != dsn:
            return
        peer = self.cfp_wait[0]
        self.cfp_wait = None
        q = self.tx_queues[peer]
        item = q[0]
        item[1] += 1
        if item[1] > self.s.params.max_retries:
            q.popleft()
            self.net.mac_drop(self.id, item[0], "no_ack")

    def _send_ack(self, frame: Frame, channel: int) -> None:
        ack = Frame(FrameKind.ACK, self.id, frame.src, frame.dsn)
        self.loop.after(TURNAROUND_TIME, self._transmit_ack, ack, channel)

    def _transmit_ack(self, ack: Frame, channel: int) -> None:
        if not self.busy_transmitting():
            self.transmit(ack, channel)

    # ------------------------------------------------------------ reception

    def receive(self, frame: Frame, channel: int, t: int) -> None:
        kind = frame.kind
        if kind is FrameKind.ACK:
            if frame.dst == self.id and not self._gts_ack(frame):
                self.csma.on_ack(frame)
            return
        if frame.dst == self.id:
            self._send_ack(frame, channel)
            if self.last_dsn.get(frame.src) == frame.dsn:
                return
            self.last_dsn[frame.src] = frame.dsn
        elif frame.dst != BROADCAST:
            if kind is FrameKind.DATA and self.synced:
                self._foreign_cfp_frame(frame, channel, t)
            return
        if kind is FrameKind.ENHANCED_BEACON:
            self._on_beacon(frame, t)
        elif not self.synced:
            return
        elif kind is FrameKind.DATA:
            self._on_data(frame, t)
        elif kind is FrameKind.GTS_REQUEST:
            self._on_gts_request(frame)
        elif kind is FrameKind.GTS_RESPONSE:
            self._on_gts_response(frame)
        elif kind is FrameKind.GTS_NOTIFY:
            self._on_gts_notify(frame)
        elif kind is FrameKind.ASSOCIATION_REQUEST:
            self._on_assoc_request(frame)
        elif kind is FrameKind.ASSOCIATION_RESPONSE:
            self._on_assoc_response(frame, t)
        elif kind is FrameKind.BEACON_ALLOC_NOTIFICATION:
            self._on_beacon_alloc(frame)
        elif kind is FrameKind.BEACON_COLLISION_NOTIFICATION:
            self._on_beacon_collision(frame)
        elif kind is FrameKind.BEACON_REQUEST:
            self._on_beacon_request(frame)
        if frame.joined and self.associated and frame.src not in self.blacklist:
            self.neighbors.setdefault(frame.src, self.net.positions[frame.src])

    def _conflict(self, entry: ActEntry, holder) -> None:
        """Someone else uses this cell nearby: remember it as busy and give the slot up."""
        self._mark_heard(entry.descriptor, holder)
        if entry.state is not ActState.DEALLOCATING:
            self.start_deallocation(entry, from_scheduler=False)

    def _foreign_cfp_frame(self, frame: Frame, channel: int, t: int) -> None:
        pos = self.clock.position(t - frame.airtime)
        if pos.gts_index is None:
            return
        entry = self.act.entries.get((pos.sf_in_msf, pos.gts_index))
        if entry is None or entry.descriptor.channel != channel or entry.descriptor.direction is not Direction.RX:
            return
        if entry.descriptor.peer == frame.src and frame.dst == self.id:
            return
        self.log.emit(t, self.id, "cfp_interference", src=frame.src, **_desc_fields(entry.descriptor))
        self._conflict(entry, ("foreign", frame.src))

    def rx_failed(self, frame: Frame, channel: int, t: int) -> None:
        if not self.synced:
            return
        start = t - frame.airtime
        if self.associated and self.clock.position(start).slot == 0:
            self._beacon_slot_garbled(start)
        elif frame.kind is FrameKind.DATA:
            self._foreign_cfp_frame(frame, channel, t)

    def _on_data(self, frame: Frame, t: int) -> None:
        pos = self.clock.position(t - frame.airtime)
        entry = self.act.entries.get((pos.sf_in_msf, pos.gts_index)) if pos.gts_index is not None else None
        if entry is not None and entry.descriptor.peer == frame.src:
            entry.rx_seen = True
            if entry.state is ActState.UNCONFIRMED:
                entry.state = ActState.VALID
                self.log.emit(t, self.id, "gts_confirmed", by="data", **_desc_fields(entry.descriptor))
        self.net.deliver(self.id, frame.src, frame.payload)

    # ------------------------------------------------------------ GTS handshake

    def gts_handshake_initiate(self, peer: int, direction: Direction = Direction.TX, from_scheduler=True) -> bool:
        if peer in self.hs_alloc or not self.associated:
            return False
        sab = self.full_sab()
        pref = first_free_slot(sab, (0, 0))
        if pref is None:
            return False
        hs = Handshake(MgmtType.ALLOCATION, peer, from_scheduler=from_scheduler)
        self.hs_alloc[peer] = hs
        cmd = GtsCommand(MgmtType.ALLOCATION, sab=sab, preferred=pref[:2], direction=direction)
        frame = self._frame(FrameKind.GTS_REQUEST, peer, cmd)
        self.log.emit(self.loop.now, self.id, "gts_request", peer=peer, mgmt="alloc")
        self.csma.send(frame, lambda f, r: self._request_sent(hs, r))
        return True

    def _request_sent(self, hs: Handshake, result: CsmaResult) -> None:
        table = self.hs_alloc if hs.mgmt is MgmtType.ALLOCATION else self.hs_dealloc
        key = hs.peer if hs.mgmt is MgmtType.ALLOCATION else hs.key
        if table.get(key) is not hs:
            return
        if result is not CsmaResult.SUCCESS:
            self._handshake_failed(hs, result.value)
            return
        hs.timer = self.loop.timer(self.loop.now + self.response_wait, self._handshake_failed, hs, "timeout")

    def _handshake_failed(self, hs: Handshake, reason: str) -> None:
        if hs.mgmt is MgmtType.ALLOCATION:
            if self.hs_alloc.get(hs.peer) is not hs:
                return
            del self.hs_alloc[hs.peer]
        else:
            if self.hs_dealloc.get(hs.key) is not hs:
                return
            del self.hs_dealloc[hs.key]
            # an unanswered deallocation still frees the slot locally
            entry = self.act.entries.get(hs.key)
            if entry is not None and entry.descriptor.peer == hs.peer:
                self._remove_entry(entry, "dealloc_" + reason)
        if hs.timer:
            hs.timer.cancel()
        self.log.emit(self.loop.now, self.id, "gts_fail", peer=hs.peer, mgmt=hs.mgmt.value, reason=reason)
        if hs.from_scheduler and hs.peer in self.links:
            self.links[hs.peer].handshake_done()

    def _on_gts_request(self, frame: Frame) -> None:
        cmd: GtsCommand = frame.payload
        if cmd.mgmt is MgmtType.ALLOCATION:
            self._respond_allocation(frame.src, cmd)
        elif cmd.mgmt is MgmtType.DEALLOCATION:
            d = cmd.descriptor
            mine = self.act.entries.get(d.key)
            if mine is not None and mine.descriptor.peer == frame.src and mine.descriptor.channel == d.channel:
                self._remove_entry(mine, "dealloc_peer")
            reply = GtsCommand(MgmtType.DEALLOCATION, descriptor=_flip(d, frame.src), status=Status.SUCCESS)
            self.csma.send(self._frame(FrameKind.GTS_RESPONSE, BROADCAST, reply, target=frame.src))
        else:
            d = cmd.descriptor
            mine = self.act.entries.get(d.key)
            if mine is not None and mine.descriptor.channel == d.channel and mine.state is not ActState.DEALLOCATING:
                self.log.emit(self.loop.now, self.id, "dup_received", **_desc_fields(mine.descriptor))
                self._conflict(mine, ("owner", frame.src))

    def _respond_allocation(self, requester: int, cmd: GtsCommand) -> None:
        merged = cmd.sab | self.full_sab()
        pick = first_free_slot(merged, cmd.preferred)
        direction = cmd.direction.opposite
        if pick is None or (pick[0], pick[1]) in self.act:
            reply = GtsCommand(MgmtType.ALLOCATION, status=Status.DENIED)
        else:
            sf, slot, ch = pick
            d = GtsDescriptor(sf, slot, ch, direction, requester)
            entry = ActEntry(d, ActState.UNCONFIRMED, created=self.loop.now)
            self.act.add(entry)
            self._act_changed()
            self.loop.at(self.loop.now + self.response_wait, self._unconfirmed_timeout, entry)
            reply = GtsCommand(MgmtType.ALLOCATION, descriptor=_flip(d, self.id), status=Status.SUCCESS)
        self.csma.send(self._frame(FrameKind.GTS_RESPONSE, BROADCAST, reply, target=requester))

    def _unconfirmed_timeout(self, entry: ActEntry) -> None:
        if self.act.entries.get(entry.key) is entry and entry.state is ActState.UNCONFIRMED:
            self._remove_entry(entry, "unconfirmed")
            # leave the cell marked busy; the lease sweep reclaims it
            self._mark_heard(entry.descriptor, ("unconfirmed", self.id, entry.descriptor.peer))

    def _on_gts_response(self, frame: Frame) -> None:
        cmd: GtsCommand = frame.payload
        if frame.target == self.id:
            if cmd.mgmt is MgmtType.ALLOCATION:
                self._alloc_response(frame.src, cmd)
            elif cmd.mgmt is MgmtType.DEALLOCATION:
                self._dealloc_response(frame.src, cmd)
            return
        self._overheard(frame.src, frame.target, cmd)

    def _alloc_response(self, peer: int, cmd: GtsCommand) -> None:
        hs = self.hs_alloc.pop(peer, None)
        if hs is None:
            return
        if hs.timer:
            hs.timer.cancel()
        done = self.links[peer].handshake_done if hs.from_scheduler and peer in self.links else (lambda: None)
        if cmd.status is not Status.SUCCESS:
            self.log.emit(self.loop.now, self.id, "gts_denied", peer=peer)
            done()
            return
        d = cmd.descriptor
        if d.key in self.act:
            # our own schedule changed meanwhile; the responder's entry times out
            self.log.emit(self.loop.now, self.id, "gts_abort", **_desc_fields(d))
            done()
            return
        entry = ActEntry(d, ActState.VALID, created=self.loop.now)
        self.act.add(entry)
        self._act_changed()
        self.log.emit(self.loop.now, self.id, "gts_alloc", **_desc_fields(d))
        self.net.on_churn("alloc", self.id, d)
        note = GtsCommand(MgmtType.ALLOCATION, descriptor=d, status=Status.SUCCESS)
        self.csma.send(self._frame(FrameKind.GTS_NOTIFY, BROADCAST, note, target=peer))
        done()

    def _on_gts_notify(self, frame: Frame) -> None:
        cmd: GtsCommand = frame.payload
        if frame.target == self.id:
            if cmd.mgmt is MgmtType.ALLOCATION and cmd.descriptor is not None:
                entry = self.act.entries.get(cmd.descriptor.key)
                if entry is not None and entry.descriptor.peer == frame.src and entry.state is ActState.UNCONFIRMED:
                    entry.state = ActState.VALID
                    self.log.emit(self.loop.now, self.id, "gts_confirmed", by="notify", **_desc_fields(entry.descriptor))
            return
        self._overheard(frame.src, frame.target, cmd)

    def _overheard(self, src: int, target: int, cmd: GtsCommand) -> None:
        d = cmd.descriptor
        if d is None or cmd.status is not Status.SUCCESS or target == self.id or src == self.id:
            return
        if cmd.mgmt is MgmtType.ALLOCATION:
            mine = self.act.entries.get(d.key)
            if mine is not None and mine.descriptor.channel == d.channel and mine.descriptor.peer not in (src, target):
                self.log.emit(self.loop.now, self.id, "dup_detected", offender=src, **_desc_fields(d))
                dup = GtsCommand(MgmtType.DUPLICATE_ALLOCATION_NOTIFICATION, descriptor=d)
                self.csma.send(self._frame(FrameKind.GTS_REQUEST, src, dup))
            self._mark_heard(d, frozenset((src, target)))
        elif cmd.mgmt is MgmtType.DEALLOCATION:
            self._clear_heard(d, frozenset((src, target)))

    def start_deallocation(self, entry: ActEntry, from_scheduler: bool = True) -> bool:
        key = entry.key
        if key in self.hs_dealloc:
            return False
        entry.state = ActState.DEALLOCATING
        hs = Handshake(MgmtType.DEALLOCATION, entry.descriptor.peer, key=key, from_scheduler=from_scheduler)
        self.hs_dealloc[key] = hs
        cmd = GtsCommand(MgmtType.DEALLOCATION, descriptor=entry.descriptor)
        frame = self._frame(FrameKind.GTS_REQUEST, entry.descriptor.peer, cmd)
        self.log.emit(self.loop.now, self.id, "gts_request", peer=entry.descriptor.peer, mgmt="dealloc")
        self.csma.send(frame, lambda f, r: self._request_sent(hs, r))
        return True

    def _dealloc_response(self, peer: int, cmd: GtsCommand) -> None:
        d = cmd.descriptor
        hs = self.hs_dealloc.get(d.key) if d is not None else None
        if hs is None or hs.peer != peer:
            return
        del self.hs_dealloc[d.key]
        if hs.timer:
            hs.timer.cancel()
        entry = self.act.entries.get(d.key)
        if entry is not None and entry.descriptor.peer == peer:
            self._remove_entry(entry, "dealloc")
            note = GtsCommand(MgmtType.DEALLOCATION, descriptor=entry.descriptor)
            self.csma.send(self._frame(FrameKind.GTS_NOTIFY, BROADCAST, note, target=peer))
        if hs.from_scheduler and peer in self.links:
            self.links[peer].handshake_done()

    def _remove_entry(self, entry: ActEntry, reason: str) -> None:
        self.act.remove(*entry.key)
        self._act_changed()
        self.log.emit(self.loop.now, self.id, "gts_removed", reason=reason, **_desc_fields(entry.descriptor))
        if entry.descriptor.direction is Direction.TX and entry.state is not ActState.UNCONFIRMED:
            self.net.on_churn("dealloc", self.id, entry.descriptor)

    # ------------------------------------------------------------ periodic

    def _expiration_tick(self) -> None:
        threshold = self.s.params.expiration_threshold
        for entry in list(self.act):
            if entry.state is not ActState.VALID:
                continue
            used = entry.rx_seen if entry.descriptor.direction is Direction.RX else entry.tx_ok
            entry.idle_counter = 0 if used else entry.idle_counter + 1
            entry.rx_seen = entry.tx_ok = False
            if entry.idle_counter >= threshold:
                self.log.emit(self.loop.now, self.id, "gts_expired", **_desc_fields(entry.descriptor))
                self.start_deallocation(entry, from_scheduler=False)

    def gts_expiration_tick(self) -> None:
        self._expiration_tick()

    def _scheduler_tick(self, t: int) -> None:
        if not self.associated:
            return
        for peer in sorted(self.links):
            link = self.links[peer]
            tx = self.act.links(peer, Direction.TX)
            intent = link.on_multisuperframe(len(tx))
            est = link.estimate
            if self.log.enabled:
                self.log.emit(
                    t, self.id, "sched", peer=peer, rate=round(est.rate, 6), allocated=est.allocated,
                    required=est.required, intent=intent.value if intent else None,
                )
            if intent is Intent.ALLOCATE:
                self.net.on_intent(self.id, peer, "alloc", t)
                if not self.gts_handshake_initiate(peer):
                    # cannot even start; try again next multi-superframe
                    link.handshake_done()
            elif intent is Intent.DEALLOCATE:
                self.net.on_intent(self.id, peer, "dealloc", t)
                victim = pick_victim(tx)
                if victim is None or not self.start_deallocation(victim):
                    link.handshake_done()

    def stale_slot_lease_tick(self) -> None:
        bits = self.sab.bits
        expired = bits & self.stale
        if expired.any():
            bits &= ~expired
            for cell in zip(*np.nonzero(expired)):
                self.holders.pop(tuple(int(c) for c in cell), None)
            self.log.emit(self.loop.now, self.id, "lease_expired", cells=int(expired.sum()))
        self.stale = bits.copy()

    def remove_neighbor(self, peer: int) -> None:
        """Forget a broken link: drop its slots locally and hand queued packets back for rerouting.

        The link's traffic estimator stays; with no more packets routed over
        the link only depreciation stops its allocation attempts.
        """
        self.blacklist.add(peer)
        self.neighbors.pop(peer, None)
        for entry in list(self.act):
            if entry.descriptor.peer == peer:
                self._remove_entry(entry, "link_lost")
        if self.cfp_wait is not None and self.cfp_wait[0] == peer:
            self.cfp_wait = None
        for item in self.tx_queues.pop(peer, ()):
            self.net.reroute(self.id, item[0])


def _flip(d: GtsDescriptor, peer: int) -> GtsDescriptor:
    return GtsDescriptor(d.superframe, d.slot, d.channel, d.direction.opposite, peer)


def _desc_fields(d: GtsDescriptor) -> dict:
    return {"sf": d.superframe, "slot": d.slot, "ch": d.channel, "dir": d.direction.value, "peer": d.peer}
