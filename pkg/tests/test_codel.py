import math
import random
from collections import deque
from types import SimpleNamespace

from hypothesis import given, settings, strategies as st

from cakesim.codel import CodelParams, CodelState, codel_dequeue

from conftest import udp

MS = 1_000_000
TARGET, INTERVAL, MTU = 5 * MS, 100 * MS, 1514


class ReferenceCodel:
    """Straight transcription of the RFC 8289 pseudocode over (enqueue_time, size) tuples."""

    def __init__(self):
        self.q = deque()
        self.bytes = 0
        self.first_above_time = 0
        self.drop_next = 0
        self.count = 0
        self.lastcount = 0
        self.dropping = False
        self.dropped = []

    def enqueue(self, t, size):
        self.q.append((t, size))
        self.bytes += size

    def _do_dequeue(self, now):
        if not self.q:
            self.first_above_time = 0
            return None, False
        p = self.q.popleft()
        self.bytes -= p[1]
        ok = False
        sojourn = now - p[0]
        if sojourn < TARGET or self.bytes <= MTU:
            self.first_above_time = 0
        elif self.first_above_time == 0:
            self.first_above_time = now + INTERVAL
        elif now >= self.first_above_time:
            ok = True
        return p, ok

    def _law(self, t):
        return t + int(INTERVAL / math.sqrt(self.count))

    def dequeue(self, now):
        p, ok = self._do_dequeue(now)
        if p is None:
            self.dropping = False
            return None
        if self.dropping:
            if not ok:
                self.dropping = False
            while now >= self.drop_next and self.dropping:
                self.dropped.append((now, p))
                self.count += 1
                p, ok = self._do_dequeue(now)
                if not ok:
                    self.dropping = False
                else:
                    self.drop_next = self._law(self.drop_next)
        elif ok:
            self.dropped.append((now, p))
            p, ok = self._do_dequeue(now)
            self.dropping = True
            delta = self.count - self.lastcount
            self.count = 1
            if delta > 1 and now - self.drop_next < 16 * INTERVAL:
                self.count = delta
            self.drop_next = self._law(now)
            self.lastcount = self.count
        return p


def make_flow():
    return SimpleNamespace(queue=deque(), bytes=0, aqm=CodelState(CodelParams(TARGET, INTERVAL, MTU)))


def push(flow, t, size=1514):
    p = udp(size=size)
    p.enqueue_time = t
    flow.queue.append(p)
    flow.bytes += size
    return p


def replay(events):
    """Feed the same (kind, time) script to both implementations and compare outcomes."""
    flow, ref = make_flow(), ReferenceCodel()
    drops = []
    ours, theirs = [], []
    for kind, t in events:
        if kind == "enq":
            push(flow, t)
            ref.enqueue(t, 1514)
        else:
            got = codel_dequeue(flow, t, lambda p: drops.append(t))
            want = ref.dequeue(t)
            ours.append(None if got is None else got.enqueue_time)
            theirs.append(None if want is None else want[0])
    return ours, theirs, drops, [t for t, _ in ref.dropped]


def test_below_target_never_drops():
    flow = make_flow()
    drops = []
    for i in range(1000):
        push(flow, i * MS)
        assert codel_dequeue(flow, i * MS + 2 * MS, drops.append) is not None
    assert drops == []


def test_first_drop_one_interval_after_crossing_target():
    flow = make_flow()
    drops = []
    t = 0
    # 2 packets in per 1 out: the standing queue grows without bound
    step = MS
    for _ in range(20):
        push(flow, t)
    first_above = None
    while not drops:
        push(flow, t)
        push(flow, t)
        codel_dequeue(flow, t, lambda p, t=t: drops.append(t))
        if first_above is None and flow.aqm.first_above_time is not None:
            first_above = t
        t += step
    assert drops[0] == first_above + INTERVAL


def test_empty_queue_leaves_dropping_state():
    flow = make_flow()
    flow.aqm.dropping = True
    assert codel_dequeue(flow, 0, lambda p: None) is None
    assert flow.aqm.dropping is False


def test_control_law_spacing():
    st_ = CodelState()
    st_.count = 4
    assert st_.control_law(1000) == 1000 + INTERVAL // 2


def test_matches_reference_on_overload_then_drain():
    events = []
    t = 0
    for i in range(4000):
        # 1.5 arrivals per departure for 2 s, then 0.5 for 1 s, then none
        if i < 2000:
            events.append(("enq", t))
        if i < 3000 and i % 2 == 0:
            events.append(("enq", t))
        events.append(("deq", t + 1))
        t += MS
    ours, theirs, drops, ref_drops = replay(events)
    assert ours == theirs
    assert drops == ref_drops
    assert len(drops) > 10


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32))
def test_matches_reference_on_random_scripts(seed):
    r = random.Random(seed)
    events, t = [], 0
    load = r.uniform(0.5, 3.0)
    for _ in range(3000):
        t += r.randrange(1, 2 * MS)
        if r.random() < load / (1 + load):
            events.append(("enq", t))
        else:
            events.append(("deq", t))
    ours, theirs, drops, ref_drops = replay(events)
    assert ours == theirs
    assert drops == ref_drops
