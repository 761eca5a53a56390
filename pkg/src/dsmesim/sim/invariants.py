"""Whole-network schedule checks used by tests and by periodic in-run audits."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass
from typing import Iterable, Sequence

from ..schedule import Direction


@dataclass(frozen=True)
class SnapshotRow:
    node: int
    peer: int
    superframe: int
    slot: int
    channel: int
    direction: str
    state: str


def schedule_snapshot(nodes: Sequence) -> list:
    """Every ACT entry in the network, sorted for stable output."""
    rows = []
    for node in nodes:
        act = getattr(node, "act", None)
        if act is None:
            continue
        for e in act:
            d = e.descriptor
            rows.append(SnapshotRow(node.id, d.peer, d.superframe, d.slot, d.channel, d.direction.value, e.state.name))
    rows.sort(key=lambda r: (r.node, r.superframe, r.slot, r.channel))
    return rows


def valid_links(rows: Iterable[SnapshotRow]) -> list:
    """(tx, rx, sf, slot, ch) for TX entries whose receiver holds the matching VALID RX entry."""
    rx = {(r.node, r.peer, r.superframe, r.slot, r.channel) for r in rows if r.direction == Direction.RX.value and r.state == "VALID"}
    out = []
    for r in rows:
        if r.direction == Direction.TX.value and r.state == "VALID":
            if (r.peer, r.node, r.superframe, r.slot, r.channel) in rx:
                out.append((r.node, r.peer, r.superframe, r.slot, r.channel))
    return out


def exclusivity_violations(rows: Sequence[SnapshotRow], medium) -> list:
    """Pairs of bilaterally VALID links that share a cell and would interfere.

    Link a->b and c->d conflict on the same (superframe, slot, channel) when
    either transmitter lies within interference range of the other receiver.
    """
    cells = defaultdict(list)
    for link in valid_links(rows):
        cells[link[2:]].append(link[:2])
    intf = medium.intf_sets
    bad = []
    for cell, links in cells.items():
        for i in range(len(links)):
            a, b = links[i]
            for c, d in links[i + 1 :]:
                if c in intf[b] or a in intf[d] or c == b or a == d:
                    bad.append((cell, (a, b), (c, d)))
    return bad


def bilateral_inconsistencies(rows: Sequence[SnapshotRow]) -> list:
    """VALID entries with no VALID or pending counterpart at the peer."""
    index = {(r.node, r.superframe, r.slot): r for r in rows}
    bad = []
    for r in rows:
        if r.state != "VALID":
            continue
        other = index.get((r.peer, r.superframe, r.slot))
        if other is None or other.peer != r.node or other.channel != r.channel or other.direction == r.direction:
            bad.append(r)
    return bad


def cap_containment_violations(records) -> list:
    """CSMA clear-channel assessments that fell outside a CAP, from an event log."""
    return [r for r in records if r[2] == "cap_violation"]


def sync_tree_acyclic(nodes: Sequence) -> bool:
    """Following sync parents from any node reaches an unsynchronized node or the PAN coordinator."""
    parent = {n.id: getattr(n, "sync_parent", None) for n in nodes}
    for start in parent:
        seen = set()
        cur = start
        while cur is not None:
            if cur in seen:
                return False
            seen.add(cur)
            cur = parent.get(cur)
    return True
