"""Deterministic discrete-event loop with nanosecond timestamps."""

from __future__ import annotations

import heapq
import itertools
from typing import Callable

from ..pktmodel import SimTime


class EventLoop:
    """Events run in time order; ties run in scheduling order."""

    def __init__(self) -> None:
        self.now: SimTime = 0
        self._heap: list = []
        self._seq = itertools.count()
        self.executed = 0

    def schedule(self, t: SimTime, fn: Callable, *args) -> None:
        if t < self.now:
            raise ValueError(f"cannot schedule in the past ({t} < {self.now})")
        heapq.heappush(self._heap, (t, next(self._seq), fn, args))

    def after(self, delay: SimTime, fn: Callable, *args) -> None:
        self.schedule(self.now + delay, fn, *args)

    def __len__(self) -> int:
        return len(self._heap)

    def run(self, until: SimTime) -> None:
        heap = self._heap
        pop = heapq.heappop
        n = 0
        while heap and heap[0][0] <= until:
            t, _, fn, args = pop(heap)
            self.now = t
            fn(*args)
            n += 1
        self.executed += n
        self.now = max(self.now, until)
