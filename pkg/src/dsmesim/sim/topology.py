"""Node placement for the evaluation scenarios."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from ..schedule import ConfigError

# ring sizes read off the 62-node reference layout
PAPER_RINGS = (6, 12, 18, 25)
DESK_RINGS = (6, 10, 14)
DEFAULT_TREE = (-1, 0, 0, 0, 1, 1, 2, 3, 3, 6)


@dataclass(frozen=True)
class TopologySpec:
    kind: str = "circles"
    rings: tuple = DESK_RINGS
    # distance between consecutive rings / line nodes, as a fraction of the radio range
    spacing: float = 0.7
    n: int = 6
    parents: tuple = DEFAULT_TREE
    positions: Optional[tuple] = None
    links: Optional[tuple] = None


@dataclass
class Topology:
    positions: np.ndarray
    sink: int = 0
    # ring or hop index used to group per-origin statistics
    level: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    parents: Optional[dict] = None
    links: Optional[list] = None

    @property
    def n(self) -> int:
        return len(self.positions)


def circles(rings: Sequence[int], spacing: float) -> Topology:
    if not rings or any(c < 1 for c in rings):
        raise ConfigError("every ring needs at least one node")
    pts = [(0.0, 0.0)]
    level = [0]
    for r, count in enumerate(rings, start=1):
        offset = (r % 2) * math.pi / count
        for i in range(count):
            a = 2 * math.pi * i / count + offset
            pts.append((r * spacing * math.cos(a), r * spacing * math.sin(a)))
            level.append(r)
    return Topology(np.array(pts), 0, np.array(level))


def line(n: int, spacing: float) -> Topology:
    if n < 2:
        raise ConfigError("a line needs at least two nodes")
    pos = np.column_stack([np.arange(n) * spacing, np.zeros(n)])
    return Topology(pos, 0, np.arange(n))


def tree(parents: Sequence[int], spacing: float, comm_range: float) -> Topology:
    """Layered layout: depth along x, leaves spread along y in DFS order."""
    n = len(parents)
    roots = [i for i, p in enumerate(parents) if p < 0]
    if roots != [0]:
        raise ConfigError("the tree must have node 0 as its only root")
    children: dict = {i: [] for i in range(n)}
    for i, p in enumerate(parents):
        if p >= 0:
            if not 0 <= p < n:
                raise ConfigError(f"parent {p} of node {i} does not exist")
            children[p].append(i)
    depth = np.zeros(n, dtype=int)
    y = np.zeros(n)
    seen = set()
    next_leaf = [0.0]

    def visit(i: int, d: int) -> float:
        if i in seen:
            raise ConfigError("parent map contains a cycle")
        seen.add(i)
        depth[i] = d
        if not children[i]:
            y[i] = next_leaf[0]
            next_leaf[0] += 1
        else:
            y[i] = float(np.mean([visit(c, d + 1) for c in children[i]]))
        return y[i]

    visit(0, 0)
    if len(seen) != n:
        raise ConfigError("parent map is not connected to the root")
    pos = np.column_stack([depth * spacing * 0.75, y * spacing * 0.55])
    for i, p in enumerate(parents):
        if p >= 0 and np.hypot(*(pos[i] - pos[p])) > comm_range:
            raise ConfigError(f"tree edge {i}->{p} longer than the radio range")
    return Topology(pos, 0, depth, parents={i: p for i, p in enumerate(parents) if p >= 0})


def build_topology(spec: TopologySpec, comm_range: float) -> Topology:
    step = spec.spacing * comm_range
    if spec.kind == "circles":
        return circles(spec.rings, step)
    if spec.kind == "paper":
        return circles(PAPER_RINGS, step)
    if spec.kind == "line":
        return line(spec.n, step)
    if spec.kind == "tree":
        return tree(spec.parents, step, comm_range)
    if spec.kind == "explicit":
        if not spec.positions:
            raise ConfigError("explicit topology needs positions")
        pos = np.asarray(spec.positions, dtype=float)
        if pos.ndim != 2 or pos.shape[1] != 2:
            raise ConfigError("positions must be a list of (x, y) pairs")
        links = [tuple(l) for l in spec.links] if spec.links else None
        if links and any(not (0 <= a < len(pos) and 0 <= b < len(pos)) for a, b in links):
            raise ConfigError("link refers to an unknown node")
        parents = None
        if spec.parents and len(spec.parents) == len(pos):
            parents = {i: p for i, p in enumerate(spec.parents) if p >= 0}
        return Topology(pos, 0, _hop_levels(pos, comm_range, links), parents=parents, links=links)
    raise ConfigError(f"unknown topology kind {spec.kind!r}")


def _hop_levels(pos: np.ndarray, comm_range: float, links) -> np.ndarray:
    n = len(pos)
    if links:
        adj = {i: set() for i in range(n)}
        for a, b in links:
            adj[a].add(b)
            adj[b].add(a)
    else:
        d = np.hypot(*(pos[:, None, :] - pos[None, :, :]).transpose(2, 0, 1))
        adj = {i: set(np.flatnonzero((d[i] <= comm_range) & (np.arange(n) != i)).tolist()) for i in range(n)}
    level = np.full(n, -1)
    level[0] = 0
    frontier = [0]
    while frontier:
        nxt = []
        for i in frontier:
            for j in adj[i]:
                if level[j] < 0:
                    level[j] = level[i] + 1
                    nxt.append(j)
        frontier = nxt
    return level


def greedy_voids(positions: np.ndarray, comm_range: float, sink: int = 0) -> list:
    """Nodes with no neighbour strictly closer to the sink."""
    pos = np.asarray(positions, dtype=float)
    d = np.hypot(*(pos[:, None, :] - pos[None, :, :]).transpose(2, 0, 1))
    to_sink = d[sink]
    return [i for i in range(len(pos)) if i != sink and not np.any((d[i] <= comm_range) & (to_sink < to_sink[i]))]
