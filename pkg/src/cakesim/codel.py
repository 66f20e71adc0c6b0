"""Per-queue CoDel AQM (sojourn-time based head dropping)."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

from .pktmodel import NS_PER_MS, Packet, SimTime


@dataclass(frozen=True)
class CodelParams:
    target: SimTime = 5 * NS_PER_MS
    interval: SimTime = 100 * NS_PER_MS
    mtu: int = 1514

    def __post_init__(self) -> None:
        if self.target <= 0 or self.interval <= 0:
            raise ValueError("target and interval must be positive")


DEFAULT_PARAMS = CodelParams()


class CodelState:
    __slots__ = ("params", "first_above_time", "drop_next", "count", "last_count", "dropping")

    def __init__(self, params: CodelParams = DEFAULT_PARAMS) -> None:
        self.params = params
        self.first_above_time: Optional[SimTime] = None
        self.drop_next: SimTime = 0
        self.count = 0
        self.last_count = 0
        self.dropping = False

    def control_law(self, t: SimTime) -> SimTime:
        return t + int(self.params.interval / math.sqrt(self.count))


def _pop(flow, now: SimTime) -> tuple[Optional[Packet], bool]:
    st: CodelState = flow.aqm
    if not flow.queue:
        st.first_above_time = None
        return None, False
    pkt = flow.queue.popleft()
    flow.bytes -= pkt.total_len
    sojourn = now - pkt.enqueue_time
    p = st.params
    if sojourn < p.target or flow.bytes <= p.mtu:
        st.first_above_time = None
        return pkt, False
    if st.first_above_time is None:
        st.first_above_time = now + p.interval
        return pkt, False
    return pkt, now >= st.first_above_time


def codel_dequeue(flow, now: SimTime, drop: Callable[[Packet], None]) -> Optional[Packet]:
    """Take the next deliverable packet from ``flow.queue``.

    ``flow`` needs ``queue`` (a deque), ``bytes`` and ``aqm`` attributes.
    Head drops decided by the control law are passed to ``drop``; None means
    the queue ran empty.
    """
    st: CodelState = flow.aqm
    pkt, ok_to_drop = _pop(flow, now)
    if pkt is None:
        st.dropping = False
        return None
    if st.dropping:
        if not ok_to_drop:
            st.dropping = False
        else:
            while now >= st.drop_next and st.dropping:
                drop(pkt)
                st.count += 1
                pkt, ok_to_drop = _pop(flow, now)
                if not ok_to_drop:
                    st.dropping = False
                else:
                    st.drop_next = st.control_law(st.drop_next)
    elif ok_to_drop:
        drop(pkt)
        pkt, ok_to_drop = _pop(flow, now)
        st.dropping = True
        delta = st.count - st.last_count
        st.count = 1
        if delta > 1 and now - st.drop_next < 16 * st.params.interval:
            st.count = delta
        st.drop_next = st.control_law(now)
        st.last_count = st.count
    return pkt
