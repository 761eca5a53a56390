"""Next-hop selection: GPSR variant that hugs the origin-sink line, and a static tree."""

from __future__ import annotations

import math
from typing import Mapping, Optional, Sequence


def _dist(a: Sequence[float], b: Sequence[float]) -> float:
    return math.hypot(a[0] - b[0], a[1] - b[1])


def line_distance(p: Sequence[float], a: Sequence[float], b: Sequence[float]) -> float:
    """Perpendicular distance from ``p`` to the infinite line through ``a`` and ``b``."""
    dx, dy = b[0] - a[0], b[1] - a[1]
    norm = math.hypot(dx, dy)
    if norm == 0:
        return _dist(p, a)
    return abs(dy * (p[0] - a[0]) - dx * (p[1] - a[1])) / norm


def gpsr_line_next_hop(
    here: Sequence[float],
    origin: Sequence[float],
    dest: Sequence[float],
    neighbors: Mapping[int, Sequence[float]],
) -> Optional[int]:
    """Among neighbours strictly closer to ``dest``, the one nearest to the origin-dest line.

    When origin and destination coincide the line is undefined and plain
    greedy forwarding (closest to ``dest``) is used.  Returns None at a void.
    """
    d_here = _dist(here, dest)
    closer = [(i, p) for i, p in neighbors.items() if _dist(p, dest) < d_here]
    if not closer:
        return None
    if _dist(origin, dest) == 0:
        return min(closer, key=lambda ip: (_dist(ip[1], dest), ip[0]))[0]
    return min(closer, key=lambda ip: (round(line_distance(ip[1], origin, dest), 9), _dist(ip[1], dest), ip[0]))[0]


def greedy_next_hop(here, dest, neighbors) -> Optional[int]:
    d_here = _dist(here, dest)
    closer = [(i, p) for i, p in neighbors.items() if _dist(p, dest) < d_here]
    if not closer:
        return None
    return min(closer, key=lambda ip: (_dist(ip[1], dest), ip[0]))[0]


class Router:
    def __init__(self, kind: str, positions, sink: int = 0, parents: Optional[dict] = None):
        if kind not in ("gpsr_line", "static_tree"):
            raise ValueError(f"unknown routing {kind!r}")
        if kind == "static_tree" and not parents:
            raise ValueError("static_tree routing needs a parent map")
        self.kind = kind
        self.positions = [tuple(map(float, p)) for p in positions]
        self.sink = sink
        self.parents = parents or {}

    def next_hop(self, node: int, origin: int, neighbors: Mapping[int, Sequence[float]], blocked=()) -> Optional[int]:
        if self.kind == "static_tree":
            p = self.parents.get(node)
            return p if p is not None and p not in blocked else None
        nbs = {i: p for i, p in neighbors.items() if i not in blocked}
        pos = self.positions
        return gpsr_line_next_hop(pos[node], pos[origin], pos[self.sink], nbs)
