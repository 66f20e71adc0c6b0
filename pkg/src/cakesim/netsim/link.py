"""A rate-limited, delayed link fed by a queueing discipline.

The link pulls from its qdisc whenever the transmitter is free, so the qdisc
holds the only queue on the path.
"""

from __future__ import annotations

from typing import Callable, Optional

from ..pktmodel import Packet, SimTime
from ..scheduler import EnqueueResult, Idle
from ..shaper import ShaperState
from .events import EventLoop


class Link:
    def __init__(
        self,
        loop: EventLoop,
        name: str,
        rate: int,
        delay: SimTime,
        qdisc,
        deliver: Callable[[Packet], None],
        overhead: int = 0,
        audit: bool = False,
    ) -> None:
        if rate <= 0:
            raise ValueError("link rate must be positive")
        if delay < 0:
            raise ValueError("link delay must be non-negative")
        self.loop = loop
        self.name = name
        self.rate = rate
        self.delay = delay
        self.qdisc = qdisc
        self.deliver = deliver
        self.overhead = overhead
        self.audit = audit
        self._clock = ShaperState(rate)
        self._busy = False
        self._wake: Optional[SimTime] = None
        self.sent_pkts = 0
        self.sent_bytes = 0
        self.max_backlog_bytes = 0

    def wire_len(self, pkt: Packet) -> int:
        return max(1, pkt.total_len - pkt.network_offset + self.overhead)

    def serialisation_time(self, nbytes: int) -> SimTime:
        return self._clock.serialisation_time(nbytes)

    def send(self, pkt: Packet) -> EnqueueResult:
        now = self.loop.now
        result = self.qdisc.enqueue(pkt, now)
        if self.audit:
            self.qdisc.check_invariants()
        b = self.qdisc.backlog_bytes
        if b > self.max_backlog_bytes:
            self.max_backlog_bytes = b
        if not self._busy:
            self._kick()
        return result

    def _kick(self) -> None:
        loop = self.loop
        now = loop.now
        r = self.qdisc.dequeue(now)
        if self.audit:
            self.qdisc.check_invariants()
        if type(r) is Idle:
            w = r.wake
            if w is not None and (self._wake is None or w < self._wake):
                self._wake = w
                loop.schedule(w, self._on_wake, w)
            return
        self._busy = True
        clock = self._clock
        if clock.t_next < now:
            clock.reset(now)
        clock.advance(self.wire_len(r))
        loop.schedule(clock.t_next, self._tx_done, r)

    def _on_wake(self, t: SimTime) -> None:
        if self._wake != t:
            return
        self._wake = None
        if not self._busy:
            self._kick()

    def _tx_done(self, pkt: Packet) -> None:
        self._busy = False
        self.sent_pkts += 1
        self.sent_bytes += pkt.total_len
        loop = self.loop
        loop.schedule(loop.now + self.delay, self.deliver, pkt)
        self._kick()
