"""One simulation run: builds the network, drives superframes, tracks every packet."""

from __future__ import annotations

import random
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..mac.baseline import CsmaNode
from ..mac.dsme import DsmeNode
from ..mac.frames import FrameKind, Packet
from ..schedule import SYMBOL_DURATION, ActState, SlotClock
from .engine import EventLog, EventLoop
from .invariants import exclusivity_violations, schedule_snapshot
from .radio import RadioMedium
from .routing import Router
from .scenario import Scenario
from .topology import build_topology
from .traffic import TrafficGenerator

FATES = ("delivered", "queued", "dropped_queue", "dropped_mac", "dropped_routing")
CHURN_BUCKET_S = 5.0


def seconds(t: float) -> int:
    return int(round(t / SYMBOL_DURATION))


@dataclass
class RunResult:
    scenario: Scenario
    complete: bool
    end_time: int
    pdr: dict  # origin -> PDR_i
    delays: dict  # origin -> list of delays in seconds
    level: dict  # origin -> ring / hop index
    fates: dict  # fate -> count over all generated packets
    fates_by_origin: dict
    churn: list  # (time_s, kind)
    intents: list  # (time_s, node, peer, kind)
    radio_on: dict  # node -> fraction over the measurement window
    snapshot: list
    counters: dict
    associated_at: dict
    coordinator_at: dict
    exclusivity_violations: int
    log: EventLog = field(repr=False, default=None)

    @property
    def mean_pdr(self) -> float:
        return float(np.mean(list(self.pdr.values()))) if self.pdr else float("nan")

    @property
    def mean_delay(self) -> float:
        vals = [d for ds in self.delays.values() for d in ds]
        return float(np.mean(vals)) if vals else float("nan")

    def delay_by_level(self) -> dict:
        out = defaultdict(list)
        for o, ds in self.delays.items():
            out[self.level[o]].extend(ds)
        return {k: float(np.mean(v)) for k, v in sorted(out.items()) if v}

    def churn_buckets(self, bucket_s: float = CHURN_BUCKET_S) -> np.ndarray:
        n = int(self.end_time * SYMBOL_DURATION // bucket_s) + 1
        counts = np.zeros(n, dtype=int)
        for t, _ in self.churn:
            counts[min(int(t // bucket_s), n - 1)] += 1
        return counts

    @property
    def mean_radio_on(self) -> float:
        vals = [v for k, v in self.radio_on.items()]
        return float(np.mean(vals)) if vals else float("nan")


class Simulation:
    def __init__(self, scenario: Scenario, log: bool = False):
        sc = scenario.validate()
        self.sc = sc
        self.loop = EventLoop()
        self.log = EventLog(enabled=log)
        topo = build_topology(sc.topology, sc.radio.comm_range)
        self.topo = topo
        self.positions = topo.positions
        self.sink = topo.sink
        self.medium = RadioMedium(self.loop, topo.positions, sc.radio.comm_range, sc.radio.interference_range, topo.links)
        self.medium.on_collision = self._on_collision
        n = topo.n
        seq = np.random.SeedSequence(sc.seed)
        node_seqs = seq.spawn(n)
        traffic_seqs = seq.spawn(n)
        rng = lambda s: random.Random(int(s.generate_state(1)[0]))
        self.dsme = sc.mac.kind == "dsme"
        if self.dsme:
            settings = sc.mac.dsme_settings()
            self.clock = SlotClock(settings.config)
            self.nodes = [DsmeNode(i, self, settings, rng(node_seqs[i]), pan_coordinator=(i == self.sink)) for i in range(n)]
        else:
            self.clock = None
            settings = sc.mac.csma_settings()
            self.nodes = [CsmaNode(i, self, settings, rng(node_seqs[i])) for i in range(n)]
            for node in self.nodes:
                node.neighbors = {j: self.positions[j] for j in self.medium.neighbors(node.id)}
        self.medium.attach(self.nodes)
        self.router = Router(sc.routing, topo.positions, self.sink, topo.parents)

        self.t_setup = seconds(sc.timing.t_setup)
        self.t_cooldown = seconds(sc.timing.t_cooldown)
        if sc.timing.max_time is not None:
            self.max_time = seconds(sc.timing.max_time)
        else:
            interval = min(sc.traffic.interval, 1e6)
            self.max_time = self.t_setup + seconds(3 * sc.timing.n_packets * interval + 10 * sc.timing.t_cooldown)
        self.origins = [i for i in range(n) if i != self.sink]
        self.seq = defaultdict(int)
        self.measured = defaultdict(int)
        self.received: dict = defaultdict(set)
        self.delays: dict = defaultdict(list)
        self.fate: dict = {}
        self.packets: dict = {}
        self.last_measure_rx = 0
        self.measure_done_at: Optional[int] = None
        self.churn: list = []
        self.intents: list = []
        self.counters: dict = defaultdict(int)
        self.associated_at: dict = {self.sink: 0} if self.dsme else {}
        self.coordinator_at: dict = {self.sink: 0} if self.dsme else {}
        self.violations = 0
        self.radio_mark: dict = {}
        self._stopped = False
        self.generators = [
            TrafficGenerator(self.loop, o, sc.traffic, rng(traffic_seqs[o]), self._emit, stop_at=self.max_time)
            for o in self.origins
        ]
        for ev in sc.events:
            a, b = ev.remove_link
            self.loop.at(seconds(ev.time), self._remove_link, int(a), int(b))
        self.loop.at(self.t_setup, self._mark_radio)
        if self.dsme:
            self.loop.at(0, self._superframe, 0)
        self.loop.at(self.t_setup, self._check_stop)

    # ------------------------------------------------------------ hooks used by nodes

    def is_associated(self, node: int) -> bool:
        return getattr(self.nodes[node], "associated", True)

    def on_associated(self, node: int, t: int) -> None:
        self.associated_at[node] = t

    def on_coordinator(self, node: int, t: int) -> None:
        self.coordinator_at.setdefault(node, t)

    def on_desync(self, node: int, t: int) -> None:
        self.counters["desync"] += 1
        self.associated_at.pop(node, None)

    def cap_violation(self, node: int, t: int) -> None:
        self.counters["cap_violations"] += 1
        self.log.emit(t, node, "cap_violation")

    def on_churn(self, kind: str, node: int, descriptor) -> None:
        self.churn.append((self.loop.now * SYMBOL_DURATION, kind))

    def on_intent(self, node: int, peer: int, kind: str, t: int) -> None:
        self.intents.append((t * SYMBOL_DURATION, node, peer, kind))

    def forwarded(self, node: int, peer: int, packet: Packet) -> None:
        self.counters["hop_tx"] += 1

    def mac_drop(self, node: int, packet: Packet, reason: str) -> None:
        key = (packet.origin, packet.seq)
        if self.packets.get(key) is packet and packet.holder == node:
            self.fate[key] = "dropped_mac"
        self.counters["mac_drop_" + reason] += 1

    # ------------------------------------------------------------ packets

    def _phase(self, origin: int, t: int) -> str:
        if t < self.t_setup:
            return "warmup"
        if self.measured[origin] < self.sc.timing.n_packets:
            self.measured[origin] += 1
            if self.measured[origin] == self.sc.timing.n_packets and all(
                self.measured[o] >= self.sc.timing.n_packets for o in self.origins
            ):
                self.measure_done_at = t
            return "measure"
        return "cooldown"

    def _emit(self, origin: int, t: int) -> None:
        phase = self._phase(origin, t)
        self.seq[origin] += 1
        packet = Packet(origin, self.seq[origin], t, phase, dest=self.sink)
        packet.holder = origin
        key = (origin, packet.seq)
        self.packets[key] = packet
        self.fate[key] = "queued"
        self.log.emit(t, origin, "generate", seq=packet.seq, phase=phase)
        self._route(origin, packet)

    def _route(self, node_id: int, packet: Packet) -> None:
        key = (packet.origin, packet.seq)
        node = self.nodes[node_id]
        nh = self.router.next_hop(node_id, packet.origin, node.neighbors, node.blacklist)
        if nh is None:
            self.fate[key] = "dropped_routing"
            self.log.emit(self.loop.now, node_id, "route_drop", origin=packet.origin, seq=packet.seq)
            return
        if not node.enqueue(packet, nh):
            self.fate[key] = "dropped_queue"
            self.log.emit(self.loop.now, node_id, "queue_drop", origin=packet.origin, seq=packet.seq)

    def deliver(self, node_id: int, src: int, packet: Packet) -> None:
        packet.holder = node_id
        packet.hops += 1
        key = (packet.origin, packet.seq)
        if node_id == self.sink:
            if packet.seq in self.received[packet.origin]:
                return
            self.received[packet.origin].add(packet.seq)
            self.fate[key] = "delivered"
            if packet.phase == "measure":
                self.delays[packet.origin].append((self.loop.now - packet.created) * SYMBOL_DURATION)
                self.last_measure_rx = self.loop.now
            self.log.emit(self.loop.now, node_id, "sink_rx", origin=packet.origin, seq=packet.seq, hops=packet.hops)
            return
        self._route(node_id, packet)

    def reroute(self, node_id: int, packet: Packet) -> None:
        self._route(node_id, packet)

    # ------------------------------------------------------------ driving

    def _superframe(self, k: int) -> None:
        t = self.loop.now
        for node in self.nodes:
            node.on_superframe(k, t)
        clock = self.clock
        every = self.sc.check_every_msf
        if every and k % clock.nsf == 0 and (k // clock.nsf) % every == 0:
            self.violations += len(exclusivity_violations(schedule_snapshot(self.nodes), self.medium))
        self.loop.at(t + clock.sd, self._superframe, k + 1)

    def _mark_radio(self) -> None:
        self.radio_mark = {n.id: n.radio_on for n in self.nodes}

    def _remove_link(self, a: int, b: int) -> None:
        self.medium.block(a, b)
        self.nodes[a].remove_neighbor(b)
        self.nodes[b].remove_neighbor(a)
        self.log.emit(self.loop.now, a, "link_removed", peer=b)

    def _check_stop(self) -> None:
        t = self.loop.now
        if self.measure_done_at is not None and t - max(self.measure_done_at, self.last_measure_rx) >= self.t_cooldown:
            self._stopped = True
            return
        self.loop.at(t + seconds(0.25), self._check_stop)

    def _on_collision(self, victim, other, receiver: int) -> None:
        cfp = self.dsme and not self.clock.in_cap(victim.start) and self.clock.position(victim.start).slot != 0
        self.counters["collisions_cfp" if cfp else "collisions"] += 1
        vf, of = victim.frame, other.frame
        if cfp and vf.kind is FrameKind.DATA and of.kind is FrameKind.DATA and vf.gts_valid and of.gts_valid:
            if vf.dst == receiver:
                pos = self.clock.position(victim.start)
                entry = self.nodes[receiver].act.entries.get((pos.sf_in_msf, pos.gts_index))
                if entry is not None and entry.state is ActState.VALID and entry.descriptor.peer == victim.sender:
                    self.counters["cfp_valid_collisions"] += 1
                    self.log.emit(
                        self.loop.now, receiver, "cfp_collision", victim=victim.sender, other=other.sender,
                        channel=victim.channel, sf=pos.sf_in_msf, slot=pos.gts_index,
                    )

    def run(self) -> RunResult:
        self.loop.run(self.max_time, stop=lambda: self._stopped)
        end = self.loop.now
        complete = self._stopped
        n_meas = self.sc.timing.n_packets
        pdr = {}
        for o in self.origins:
            got = sum(1 for s in self.received[o] if self.packets[(o, s)].phase == "measure")
            pdr[o] = got / n_meas
        fates = {f: 0 for f in FATES}
        by_origin = {o: {f: 0 for f in FATES} for o in self.origins}
        for (o, s), f in self.fate.items():
            fates[f] += 1
            by_origin[o][f] += 1
        window = max(end - self.t_setup, 1)
        radio = {}
        for node in self.nodes:
            if self.dsme:
                radio[node.id] = min(1.0, (node.radio_on - self.radio_mark.get(node.id, 0)) / window)
            else:
                radio[node.id] = 1.0
        counters = dict(self.counters)
        counters["events"] = self.loop.processed
        counters["frames"] = self.medium.frames_sent
        counters["queued_at_end"] = sum(n.queued() for n in self.nodes)
        counters.update({"log_" + k: v for k, v in self.log.counts.items()})
        snapshot = schedule_snapshot(self.nodes) if self.dsme else []
        return RunResult(
            scenario=self.sc,
            complete=complete,
            end_time=end,
            pdr=pdr,
            delays=dict(self.delays),
            level={o: int(self.topo.level[o]) for o in self.origins},
            fates=fates,
            fates_by_origin=by_origin,
            churn=list(self.churn),
            intents=list(self.intents),
            radio_on=radio,
            snapshot=snapshot,
            counters=counters,
            associated_at=dict(self.associated_at),
            coordinator_at=dict(self.coordinator_at),
            exclusivity_violations=self.violations,
            log=self.log,
        )


def run(scenario: Scenario, log: bool = False) -> RunResult:
    return Simulation(scenario, log=log).run()
