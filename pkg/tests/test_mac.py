import random

import pytest

from conftest import advance, line_positions, quiet_sim, wait_associated
from dsmesim.mac.baseline import CsmaNode, CsmaSettings, tuned_csma_params
from dsmesim.mac.csma import CsmaResult, CsmaTransmitter
from dsmesim.mac.dsme import DsmeSettings
from dsmesim.mac.frames import ACK_AIRTIME, AIRTIME, BROADCAST, Frame, FrameKind, Packet
from dsmesim.schedule import (
    CCA_TIME,
    TURNAROUND_TIME,
    ActState,
    ConfigError,
    Direction,
    MacTimingParams,
    SuperframeConfig,
    multisuperframe_duration,
)
from dsmesim.sim.engine import EventLog, EventLoop
from dsmesim.sim.invariants import (
    bilateral_inconsistencies,
    exclusivity_violations,
    schedule_snapshot,
    sync_tree_acyclic,
)
from dsmesim.sim.radio import RadioMedium


def test_airtimes():
    # (PHY overhead + PSDU) octets at two symbols per octet
    assert AIRTIME[FrameKind.DATA] == (6 + 127) * 2 == 266
    assert ACK_AIRTIME == (6 + 5) * 2 == 22


def test_frame_ack_rules():
    assert Frame(FrameKind.DATA, 1, 0).needs_ack
    assert not Frame(FrameKind.ACK, 1, 0).needs_ack
    assert not Frame(FrameKind.GTS_RESPONSE, 1, BROADCAST).needs_ack
    assert Frame(FrameKind.GTS_REQUEST, 1, 0).needs_ack


def test_settings_reject_slot_too_short_for_data():
    with pytest.raises(ConfigError):
        DsmeSettings(config=SuperframeConfig(2, 2, 2))


# ---------------------------------------------------------------- CSMA/CA


class _Net:
    def __init__(self, positions):
        self.loop = EventLoop()
        self.log = EventLog()
        self.medium = RadioMedium(self.loop, positions, 50.0)
        self.delivered = []
        self.dropped = []

    def deliver(self, node, src, packet):
        self.delivered.append((node, src, packet))

    def forwarded(self, node, peer, packet):
        pass

    def mac_drop(self, node, packet, reason):
        self.dropped.append((node, packet, reason))


def _csma_pair(distance=30.0, params=None):
    net = _Net([(0.0, 0.0), (distance, 0.0)])
    settings = CsmaSettings(params=params or MacTimingParams(min_be=3, max_be=5, max_backoffs=4, max_retries=3))
    nodes = [CsmaNode(i, net, settings, random.Random(i)) for i in range(2)]
    net.medium.attach(nodes)
    return net, nodes


def test_csma_single_pair_delivers_after_one_backoff():
    net, nodes = _csma_pair()
    start = []
    orig = net.medium.transmit
    net.medium.transmit = lambda s, ch, f: start.append((s, net.loop.now, f.kind)) or orig(s, ch, f)
    nodes[1].enqueue(Packet(1, 1, 0, "measure"), 0)
    net.loop.run(100_000)
    assert [p.seq for _, _, p in net.delivered] == [1]
    data_start = start[0][1]
    # backoff is a multiple of the unit period, then CCA and turnaround
    assert (data_start - CCA_TIME - TURNAROUND_TIME) % 20 == 0
    assert data_start - CCA_TIME - TURNAROUND_TIME < (1 << 3) * 20
    assert start[1][2] is FrameKind.ACK
    assert start[1][1] == data_start + AIRTIME[FrameKind.DATA] + TURNAROUND_TIME


def test_csma_no_receiver_gives_no_ack_after_all_retries():
    net, nodes = _csma_pair(distance=500.0)
    nodes[1].enqueue(Packet(1, 1, 0, "measure"), 0)
    net.loop.run(1_000_000)
    assert net.medium.frames_sent == 3 + 1
    assert net.dropped and net.dropped[0][2] == CsmaResult.NO_ACK.value


def test_csma_busy_channel_gives_access_failure():
    net, nodes = _csma_pair()
    ccas = []
    net.medium.busy = lambda node, ch, t: ccas.append(t) or True
    nodes[1].enqueue(Packet(1, 1, 0, "measure"), 0)
    net.loop.run(1_000_000)
    assert len(ccas) == 4 + 1
    assert net.medium.frames_sent == 0
    assert net.dropped[0][2] == CsmaResult.CHANNEL_ACCESS_FAILURE.value


def test_csma_queue_capacity():
    net, nodes = _csma_pair()
    settings = CsmaSettings(queue_capacity=2)
    node = CsmaNode(1, net, settings, random.Random(0))
    assert node.enqueue(Packet(1, 1, 0, "m"), 0)
    assert node.enqueue(Packet(1, 2, 0, "m"), 0)
    assert not node.enqueue(Packet(1, 3, 0, "m"), 0)


def test_csma_duplicate_frame_delivered_once():
    net, nodes = _csma_pair()
    f = Frame(FrameKind.DATA, 1, 0, 7, Packet(1, 1, 0, "m"))
    nodes[0].receive(f, 11, 0)
    nodes[0].receive(f, 11, 10)
    assert len(net.delivered) == 1


def test_tuned_baseline_parameters():
    p = tuned_csma_params()
    assert (p.min_be, p.max_be, p.max_backoffs, p.max_retries) == (7, 7, 5, 7)


def test_transmitter_abort_reports_every_frame():
    net, nodes = _csma_pair()
    results = []
    tx = CsmaTransmitter(nodes[1], MacTimingParams(), random.Random(0), lambda: 11)
    for i in range(3):
        tx.send(Frame(FrameKind.DATA, 1, 0, i), lambda f, r: results.append(r))
    tx.abort_all()
    assert results == [CsmaResult.ABORTED] * 3
    assert len(tx) == 0


# ---------------------------------------------------------------- formation and GTS handshake


def test_three_node_line_forms_and_tree_is_acyclic():
    sim = quiet_sim(line_positions(3))
    wait_associated(sim)
    assert [n.sync_parent for n in sim.nodes] == [None, 0, 1]
    assert sync_tree_acyclic(sim.nodes)


def test_first_allocation_takes_lowest_free_cell():
    sim = quiet_sim(line_positions(2))
    wait_associated(sim)
    a, b = sim.nodes[1], sim.nodes[0]
    assert a.gts_handshake_initiate(0, from_scheduler=False)
    advance(sim, 3.0)
    tx = list(a.act)
    rx = list(b.act)
    assert len(tx) == len(rx) == 1
    d = tx[0].descriptor
    assert (d.superframe, d.slot, d.channel, d.direction) == (0, 0, 11, Direction.TX)
    assert rx[0].descriptor.direction is Direction.RX and rx[0].state is ActState.VALID
    assert not bilateral_inconsistencies(schedule_snapshot(sim.nodes))


def test_disjoint_pairs_reuse_a_cell():
    sim = quiet_sim(line_positions(6))
    wait_associated(sim)
    sim.nodes[1].gts_handshake_initiate(0, from_scheduler=False)
    sim.nodes[5].gts_handshake_initiate(4, from_scheduler=False)
    advance(sim, 4.0)
    cells = {(e.descriptor.superframe, e.descriptor.slot, e.descriptor.channel) for n in (sim.nodes[1], sim.nodes[5]) for e in n.act}
    assert len(cells) == 1
    assert not exclusivity_violations(schedule_snapshot(sim.nodes), sim.medium)


def test_neighbours_avoid_overheard_cell():
    sim = quiet_sim(line_positions(4))
    wait_associated(sim)
    sim.nodes[1].gts_handshake_initiate(0, from_scheduler=False)
    advance(sim, 3.0)
    sim.nodes[3].gts_handshake_initiate(2, from_scheduler=False)
    advance(sim, 3.0)
    first = next(iter(sim.nodes[1].act)).descriptor
    second = next(iter(sim.nodes[3].act)).descriptor
    assert (first.superframe, first.slot, first.channel) != (second.superframe, second.slot, second.channel)
    assert not exclusivity_violations(schedule_snapshot(sim.nodes), sim.medium)


def test_missed_broadcast_is_repaired_by_duplicate_notification():
    sim = quiet_sim(line_positions(4))
    wait_associated(sim)
    sim.nodes[1].gts_handshake_initiate(0, from_scheduler=False)
    advance(sim, 3.0)
    # node 2 and 3 "missed" the broadcasts announcing 1 -> 0
    for i in (2, 3):
        sim.nodes[i].sab.bits[:] = False
        sim.nodes[i].holders.clear()
    sim.nodes[3].gts_handshake_initiate(2, from_scheduler=False)
    advance(sim, 5.0)
    events = {r[2] for r in sim.log.records}
    assert "dup_detected" in events and "dup_received" in events
    assert not exclusivity_violations(schedule_snapshot(sim.nodes), sim.medium)
    # the evicted cell stays marked at the node that was told about it
    d = next(iter(sim.nodes[1].act)).descriptor
    assert sim.nodes[2].sab.bits[d.superframe, d.slot, sim.nodes[2].sab.channel_index(d.channel)]


def test_unconfirmed_entry_dropped_when_notify_never_comes():
    sim = quiet_sim(line_positions(2))
    wait_associated(sim)
    requester, responder = sim.nodes[1], sim.nodes[0]
    requester._alloc_response = lambda peer, cmd: None  # the response is lost
    requester.gts_handshake_initiate(0, from_scheduler=False)
    advance(sim, 0.5)
    assert [e.state for e in responder.act] == [ActState.UNCONFIRMED]
    advance(sim, responder.response_wait * 16e-6 + 2.0)
    assert list(responder.act) == []
    assert responder.sab.bits.any()


def test_silent_link_expires_after_threshold():
    sim = quiet_sim(line_positions(2), so=3, mo=4, bo=7, expiration_threshold=7)
    wait_associated(sim)
    sim.nodes[1].gts_handshake_initiate(0, from_scheduler=False)
    advance(sim, 0.6)
    assert len(sim.nodes[1].act) == 1
    t_alloc = sim.log.select("gts_alloc")[-1][0]
    advance(sim, 3.0)
    expired = [r for r in sim.log.records if r[2] == "gts_expired" and r[0] > t_alloc]
    assert expired
    msf = multisuperframe_duration(SuperframeConfig(3, 4, 7))
    first = min(r[0] for r in expired)
    # seven idle multi-superframes, counted at multi-superframe boundaries
    assert 6 * msf < first - t_alloc <= 8 * msf
    assert not list(sim.nodes[1].act) and not list(sim.nodes[0].act)


def test_slot_in_use_never_expires():
    sim = quiet_sim(line_positions(2), so=3, mo=4, bo=7, expiration_threshold=7)
    wait_associated(sim)
    sim.nodes[1].gts_handshake_initiate(0, from_scheduler=False)
    advance(sim, 0.6)
    first = next(iter(sim.nodes[1].act))
    seq = 0
    for _ in range(40):
        seq += 1
        sim.nodes[1].enqueue(Packet(1, seq, sim.loop.now, "m"), 0)
        advance(sim, 0.1)
    assert not sim.log.select("gts_expired")
    assert sim.nodes[1].act.entries.get(first.key) is first


def test_deallocation_frees_both_ends_and_neighbour_bits():
    sim = quiet_sim(line_positions(3))
    wait_associated(sim)
    sim.nodes[1].gts_handshake_initiate(0, from_scheduler=False)
    advance(sim, 3.0)
    entry = next(iter(sim.nodes[1].act))
    assert sim.nodes[2].sab.bits.any()
    sim.nodes[1].start_deallocation(entry, from_scheduler=False)
    advance(sim, 3.0)
    assert not list(sim.nodes[1].act) and not list(sim.nodes[0].act)
    assert not sim.nodes[2].sab.bits.any()


def test_dsme_duplicate_data_is_filtered():
    sim = quiet_sim(line_positions(2))
    wait_associated(sim)
    node = sim.nodes[0]
    got = []
    sim.deliver = lambda n, s, p: got.append(p)
    f = Frame(FrameKind.DATA, 1, 0, 99, Packet(1, 1, 0, "m"))
    node.receive(f, 11, sim.loop.now)
    node.receive(f, 11, sim.loop.now + 1)
    assert len(got) == 1


def test_beacon_slots_unique_in_two_hop_neighbourhood():
    sim = quiet_sim(line_positions(6))
    wait_associated(sim)
    advance(sim, 30.0)
    slots = {n.id: n.beacon_slot for n in sim.nodes if n.beacon_slot is not None}
    for i, s in slots.items():
        for j, t in slots.items():
            if i < j and abs(i - j) <= 2:
                assert s != t, (i, j)
