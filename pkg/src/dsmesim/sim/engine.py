"""Discrete-event core: integer symbol clock, stable ordering, event log."""

from __future__ import annotations

import heapq
import io
import json
from dataclasses import dataclass, field
from typing import Any, Callable, Optional, TextIO

LOG_FORMAT_VERSION = 1
LOG_HEADER = f"# dsmesim-eventlog v{LOG_FORMAT_VERSION} fields=time_symbols,node,event,data"


class Timer:
    """Handle for a scheduled callback that may be cancelled."""

    __slots__ = ("cancelled",)

    def __init__(self):
        self.cancelled = False

    def cancel(self) -> None:
        self.cancelled = True


class EventLoop:
    def __init__(self):
        self.now = 0
        self._heap: list = []
        self._seq = 0
        self.processed = 0

    def at(self, t: int, fn: Callable, *args) -> None:
        if t < self.now:
            raise ValueError(f"event at {t} scheduled in the past (now={self.now})")
        self._seq += 1
        heapq.heappush(self._heap, (t, self._seq, fn, args))

    def after(self, delay: int, fn: Callable, *args) -> None:
        self.at(self.now + delay, fn, *args)

    def timer(self, t: int, fn: Callable, *args) -> Timer:
        handle = Timer()
        self.at(t, _fire, handle, fn, args)
        return handle

    def run(self, until: int, stop: Optional[Callable[[], bool]] = None) -> None:
        heap = self._heap
        pop = heapq.heappop
        while heap and heap[0][0] <= until:
            t, _, fn, args = pop(heap)
            self.now = t
            fn(*args)
            self.processed += 1
            if stop is not None and stop():
                return
        self.now = max(self.now, until)

    def __len__(self) -> int:
        return len(self._heap)


def _fire(handle: Timer, fn: Callable, args: tuple) -> None:
    if not handle.cancelled:
        fn(*args)


@dataclass
class EventLog:
    """Line-delimited records ``time node event {json}``; disabled logs only count."""

    enabled: bool = False
    records: list = field(default_factory=list)
    counts: dict = field(default_factory=dict)

    def emit(self, t: int, node: int, event: str, **data: Any) -> None:
        self.counts[event] = self.counts.get(event, 0) + 1
        if self.enabled:
            self.records.append((t, node, event, data))

    def select(self, event: str) -> list:
        return [r for r in self.records if r[2] == event]

    def write(self, out: TextIO) -> None:
        out.write(LOG_HEADER + "\n")
        for t, node, event, data in self.records:
            out.write(f"{t} {node} {event} {json.dumps(data, sort_keys=True, default=_jsonable)}\n")

    def dumps(self) -> str:
        buf = io.StringIO()
        self.write(buf)
        return buf.getvalue()


def _jsonable(x):
    if hasattr(x, "value"):
        return x.value
    if hasattr(x, "__dict__"):
        return vars(x)
    return str(x)


def read_log(lines) -> list:
    """Parse a written log back into ``(time, node, event, data)`` tuples."""
    it = iter(lines)
    header = next(it).rstrip("\n")
    if not header.startswith("# dsmesim-eventlog v"):
        raise ValueError("not a dsmesim event log")
    version = int(header.split()[2][1:])
    if version != LOG_FORMAT_VERSION:
        raise ValueError(f"unsupported log version {version}")
    out = []
    for line in it:
        t, node, event, data = line.rstrip("\n").split(" ", 3)
        out.append((int(t), int(node), event, json.loads(data)))
    return out
