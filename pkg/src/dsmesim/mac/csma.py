"""Unslotted CSMA/CA transmitter shared by the DSME CAP and the baseline MAC."""

from __future__ import annotations

import enum
import random
from collections import deque
from dataclasses import dataclass
from typing import Callable, Optional

from ..schedule import CCA_TIME, TURNAROUND_TIME, MacTimingParams
from .frames import Frame, FrameKind


class CsmaResult(enum.Enum):
    SUCCESS = "success"
    CHANNEL_ACCESS_FAILURE = "channel_access_failure"
    NO_ACK = "no_ack"
    ABORTED = "aborted"


@dataclass
class CsmaTransactionState:
    backoff_exponent: int
    backoff_remaining: int = 0
    retries_used: int = 0
    backoffs_used: int = 0
    awaiting_ack_until: Optional[int] = None


def transaction_length(frame: Frame, ack_wait: int) -> int:
    """Symbols from CCA start until the transaction is over, ACK wait included."""
    n = CCA_TIME + TURNAROUND_TIME + frame.airtime
    if frame.needs_ack:
        n += ack_wait
    return n


class CsmaTransmitter:
    """Sends queued frames one at a time with unslotted CSMA/CA.

    ``advance(t, delay, needed)`` maps a backoff countdown onto wall time;
    the DSME node passes the CAP-aware mapping so that each CCA, frame and
    ACK wait falls inside one CAP.  ``on_done(frame, result)`` is called
    once per frame.
    """

    def __init__(
        self,
        node,
        params: MacTimingParams,
        rng: random.Random,
        channel: Callable[[], int],
        advance: Optional[Callable[[int, int, int], int]] = None,
        capacity: Optional[int] = None,
    ):
        self.node = node
        self.loop = node.loop
        self.medium = node.medium
        self.params = params
        self.rng = rng
        self.channel = channel
        self.advance = advance or (lambda t, delay, needed: t + delay)
        self.capacity = capacity
        self.queue: deque = deque()
        self.current: Optional[tuple] = None
        self.state: Optional[CsmaTransactionState] = None
        self._generation = 0

    def __len__(self) -> int:
        return len(self.queue) + (self.current is not None)

    def send(self, frame: Frame, on_done: Optional[Callable] = None) -> bool:
        if self.capacity is not None and len(self) >= self.capacity:
            return False
        self.queue.append((frame, on_done))
        if self.current is None:
            self._next()
        return True

    def abort_all(self) -> None:
        pending = ([self.current] if self.current else []) + list(self.queue)
        self.queue.clear()
        self.current = None
        self.state = None
        self._generation += 1
        for frame, cb in pending:
            if cb:
                cb(frame, CsmaResult.ABORTED)

    def _next(self) -> None:
        if not self.queue:
            self.current = None
            return
        self.current = self.queue.popleft()
        self.state = CsmaTransactionState(backoff_exponent=self.params.min_be)
        self._backoff()

    def _backoff(self) -> None:
        st = self.state
        frame = self.current[0]
        units = self.rng.randrange(1 << st.backoff_exponent)
        st.backoff_remaining = units * self.params.unit_backoff
        t_cca = self.advance(self.loop.now, st.backoff_remaining, transaction_length(frame, self.params.ack_wait))
        self.loop.at(t_cca, self._cca, self._generation)

    def _cca(self, gen: int) -> None:
        if gen != self._generation:
            return
        self.node.on_cca(self.loop.now)
        self.loop.after(CCA_TIME, self._cca_done, gen)

    def _cca_done(self, gen: int) -> None:
        if gen != self._generation:
            return
        if self.medium.busy(self.node.id, self.channel(), self.loop.now) or self.node.busy_transmitting():
            self._cca_busy()
            return
        self.loop.after(TURNAROUND_TIME, self._transmit, gen)

    def _cca_busy(self) -> None:
        st = self.state
        st.backoffs_used += 1
        st.backoff_exponent = min(st.backoff_exponent + 1, self.params.max_be)
        if st.backoffs_used > self.params.max_backoffs:
            self._finish(CsmaResult.CHANNEL_ACCESS_FAILURE)
        else:
            self._backoff()

    def _transmit(self, gen: int) -> None:
        if gen != self._generation:
            return
        frame = self.current[0]
        if self.node.busy_transmitting():
            # an ACK went out meanwhile; treat like a busy channel
            self._cca_busy()
            return
        end = self.node.transmit(frame, self.channel())
        if frame.needs_ack:
            self.state.awaiting_ack_until = end + self.params.ack_wait
            self.loop.at(self.state.awaiting_ack_until, self._ack_timeout, gen)
        else:
            self.loop.at(end, self._finish_gen, gen, CsmaResult.SUCCESS)

    def on_ack(self, ack: Frame) -> bool:
        """Returns True when ``ack`` completes the frame in progress."""
        if self.current is None or self.state.awaiting_ack_until is None:
            return False
        frame = self.current[0]
        if ack.kind is not FrameKind.ACK or ack.src != frame.dst or ack.dsn != frame.dsn:
            return False
        self.state.awaiting_ack_until = None
        self._generation += 1
        self._finish(CsmaResult.SUCCESS)
        return True

    def _ack_timeout(self, gen: int) -> None:
        if gen != self._generation or self.state.awaiting_ack_until is None:
            return
        st = self.state
        st.awaiting_ack_until = None
        st.retries_used += 1
        if st.retries_used > self.params.max_retries:
            self._finish(CsmaResult.NO_ACK)
            return
        st.backoffs_used = 0
        st.backoff_exponent = self.params.min_be
        self._backoff()

    def _finish_gen(self, gen: int, result: CsmaResult) -> None:
        if gen == self._generation:
            self._finish(result)

    def _finish(self, result: CsmaResult) -> None:
        frame, cb = self.current
        self.current = None
        self.state = None
        self._generation += 1
        if cb:
            cb(frame, result)
        if self.current is None:
            self._next()

