import random
from collections import defaultdict
from fractions import Fraction

import pytest
from hypothesis import given, settings, strategies as st

from cakesim.ackfilter import AckFilterMode
from cakesim.flowtable import FlowTableConfig, IsolationMode, ListMembership
from cakesim.pktmodel import CS1, EF, DiffServMode, ip
from cakesim.scheduler import (
    TIER_FRACTIONS, CakeConfig, CakeQdisc, DropReason, EnqueueResult, FifoQdisc, Idle, select_tier,
)
from cakesim.shaper import ShaperConfig, ShaperState

from conftest import Driver, bytes_by_flow, flow_template, udp

MBIT = 10**6
MS = 10**6


def cake(rate=0, diffserv=DiffServMode.BEST_EFFORT, isolation=IsolationMode.FLOWS, **kw) -> CakeQdisc:
    cfg = CakeConfig(shaper=ShaperConfig(rate=rate), diffserv=diffserv,
                     flows=FlowTableConfig(isolation_mode=isolation), **kw)
    return CakeQdisc(cfg, salt=11)


# -- enqueue ------------------------------------------------------------------

def test_new_flow_joins_new_list_with_quantum_credit():
    q = cake()
    q.enqueue(udp(flow_id="a"), 0)
    tier = q.tiers[0]
    assert len(tier.new_flows) == 1 and not tier.old_flows
    flow = tier.new_flows[0]
    assert flow.membership is ListMembership.NEW and flow.deficit == 1514


def test_second_packet_leaves_lists_unchanged():
    q = cake()
    q.enqueue(udp(), 0)
    before = (list(q.tiers[0].new_flows), list(q.tiers[0].old_flows))
    assert q.enqueue(udp(), 1) is EnqueueResult.QUEUED
    assert (list(q.tiers[0].new_flows), list(q.tiers[0].old_flows)) == before
    assert q.backlog_pkts == 2


def test_overlimit_drops_head_of_fattest_queue():
    q = cake(memlimit=17 * 1514)
    heads = {}
    for i, n in enumerate((3, 9, 5)):
        for k in range(n):
            p = flow_template(i)()
            p.data = k
            heads.setdefault(p.flow_id, p)
            q.enqueue(p, 0)
    dropped = []
    q.on_drop = lambda pkt, reason: dropped.append((pkt, reason))
    flows = {f.queue[0].flow_id: f for f in q.tiers[0].new_flows}
    fattest = max(flows, key=lambda k: flows[k].bytes)
    q.enqueue(flow_template(0)(), 0)
    assert dropped == [(heads[fattest], DropReason.OVERLIMIT)]
    assert q.backlog_bytes <= 17 * 1514
    q.check_invariants()


def test_default_memlimit():
    assert CakeConfig().effective_memlimit() == 4 * 1024 * 1024
    big = CakeConfig(shaper=ShaperConfig(rate=100 * 10**9))
    assert big.effective_memlimit() == 15 * 100 * 10**9 // 8 // 10


# -- tier selection -------------------------------------------------------------

def shaped_d3():
    return cake(rate=10 * MBIT, diffserv=DiffServMode.DIFFSERV3)


def test_highest_due_tier_wins():
    q = shaped_d3()
    for t in q.tiers:
        t.backlog_pkts = 1
    assert select_tier(q.tiers, 0).index == 2


def test_bulk_borrows_when_alone():
    q = shaped_d3()
    q.tiers[0].backlog_pkts = 1
    q.tiers[0].clock.t_next = 10 * MS
    assert select_tier(q.tiers, 0).index == 0


def test_borrowing_picks_earliest_clock():
    q = shaped_d3()
    for t, when in zip(q.tiers, (5, 3, 9)):
        t.backlog_pkts = 1
        t.clock.t_next = when * MS
    assert select_tier(q.tiers, 0).index == 1


def test_all_empty_is_idle():
    assert select_tier(shaped_d3().tiers, 0) == Idle(None)
    assert cake().dequeue(0) == Idle(None)


def test_diffserv3_fractions():
    fr = TIER_FRACTIONS[DiffServMode.DIFFSERV3]
    assert fr == (Fraction(1, 16), Fraction(11, 16), Fraction(1, 4))
    for mode, f in TIER_FRACTIONS.items():
        assert sum(f) <= 1 and all(0 < x <= 1 for x in f)
        assert len(f) == mode.tiers


# -- dequeue --------------------------------------------------------------------

def test_single_flow_released_at_serialisation_spacing():
    q = cake(rate=10 * MBIT)
    d = Driver(q, {"f0": flow_template(0)})
    d.run_packets(200)
    times = [t for t, _ in d.sent]
    gaps = {b - a for a, b in zip(times, times[1:])}
    assert gaps == {1500 * 800}


def test_no_burst_after_idle():
    q = cake(rate=10 * MBIT)
    q.enqueue(udp(), 0)
    assert q.dequeue(0) is not None
    t0 = 50 * MS
    q.enqueue(udp(), t0)
    q.enqueue(udp(), t0)
    first = q.dequeue(t0)
    assert not isinstance(first, Idle)
    assert q.dequeue(t0) == Idle(t0 + 1500 * 800)


def test_arrivals_at_empty_queue_are_still_shaped():
    # each packet leaves before the next arrives, but arrivals outpace the rate
    q = cake(rate=10 * MBIT)
    released = []
    t = 0
    for i in range(20):
        q.enqueue(udp(), i * 600_000)
        t = max(t, i * 600_000)
        while True:
            r = q.dequeue(t)
            if isinstance(r, Idle):
                t = r.wake
                continue
            released.append(t)
            break
    gaps = {b - a for a, b in zip(released, released[1:])}
    assert gaps == {1500 * 800}


def test_two_flows_share_equally():
    q = cake()
    d = Driver(q, {"f0": flow_template(0), "f1": flow_template(1)})
    d.run_packets(2000)
    b = bytes_by_flow(d.sent)
    assert abs(b["f0"] - b["f1"]) <= 1514


def test_drr_fairness_window_bound():
    q = cake()
    sizes = (1514, 900, 300, 64)
    d = Driver(q, {f"f{i}": flow_template(i, size=s) for i, s in enumerate(sizes)}, depth=30)
    d.run_packets(6000)
    quantum = 1514
    cum = defaultdict(int)
    series = []
    for _, p in d.sent:
        cum[p.flow_id] += p.adj_len
        series.append(dict(cum))
    window = 40
    for i in range(0, len(series) - window, 7):
        a, b = series[i], series[i + window]
        got = [b.get(f, 0) - a.get(f, 0) for f in d.templates]
        if sum(got) >= 10 * quantum:
            assert max(got) - min(got) <= 2 * quantum


def test_triple_isolation_shares():
    q = cake(isolation=IsolationMode.TRIPLE)
    hosts = [("10.0.0.2", "198.51.100.11"), ("10.0.0.2", "198.51.100.12"),
             ("10.0.0.2", "198.51.100.13"), ("10.0.0.2", "198.51.100.13"),
             ("10.0.0.3", "198.51.100.13"), ("10.0.0.3", "198.51.100.14")]
    d = Driver(q, {f"f{i}": flow_template(i, src=s, dst=t) for i, (s, t) in enumerate(hosts)})
    d.run_packets(30000)
    b = bytes_by_flow(d.sent)
    total = sum(b.values())
    expected = [Fraction(3, 22)] * 4 + [Fraction(2, 11), Fraction(3, 11)]
    for i, e in enumerate(expected):
        assert b[f"f{i}"] / total == pytest.approx(float(e), rel=0.02)


def tier_templates():
    return {
        "f0": flow_template(0, dscp=CS1),
        "f1": flow_template(1, dscp=0),
        "f2": flow_template(2, dscp=EF),
    }


def test_unshaped_tier_weights():
    q = cake(diffserv=DiffServMode.DIFFSERV3)
    d = Driver(q, tier_templates())
    d.run_packets(16000)
    b = bytes_by_flow(d.sent)
    total = sum(b.values())
    for name, frac in zip(("f0", "f1", "f2"), (1 / 16, 11 / 16, 4 / 16)):
        assert b[name] / total == pytest.approx(frac, rel=0.03)


def test_unshaped_single_tier_is_work_conserving():
    q = cake(diffserv=DiffServMode.DIFFSERV3)
    d = Driver(q, tier_templates())
    d.run_packets(500, names=["f0"])
    assert {p.flow_id for _, p in d.sent} == {"f0"}


def test_two_equal_weight_tiers_split_evenly():
    # diffserv8 tiers 6 and 7 carry equal fractions
    q = cake(diffserv=DiffServMode.DIFFSERV8)
    d = Driver(q, {"f0": flow_template(0, dscp=48), "f1": flow_template(1, dscp=56)})
    d.run_packets(4000)
    b = bytes_by_flow(d.sent)
    assert b["f0"] / b["f1"] == pytest.approx(1.0, rel=0.02)


def test_shaped_tier_caps():
    rate = 10 * MBIT
    q = cake(rate=rate, diffserv=DiffServMode.DIFFSERV3)
    d = Driver(q, tier_templates())
    dur = 10 * 10**9
    d.run_until(dur)
    b = bytes_by_flow(d.sent)
    pkt = 1500
    elapsed = d.sent[-1][0]
    assert b["f2"] <= rate / 4 * elapsed / 8e9 + pkt
    assert b["f0"] >= rate / 16 * elapsed / 8e9 - pkt
    assert sum(b.values()) >= rate * elapsed / 8e9 - pkt


def test_global_clock_never_idles_with_backlog():
    q = cake(rate=10 * MBIT, diffserv=DiffServMode.DIFFSERV3)
    d = Driver(q, tier_templates())
    d.run_packets(3000, names=["f2"])
    times = [t for t, _ in d.sent]
    # the latency-sensitive tier alone is capped at 1/4 but borrows the rest
    assert max(b - a for a, b in zip(times, times[1:])) <= 1500 * 800


def test_sparse_flow_latency():
    rate = 10 * MBIT
    q = cake(rate=rate)
    d = Driver(q, {f"f{i}": flow_template(i) for i in range(4)}, depth=40)
    d.run_until(2 * 10**9)
    delays = []
    t = d.now
    for k in range(20):
        t += 100 * MS
        d.run_until(t)
        probe = udp(src=ip("10.0.0.9"), dst=ip("198.51.100.99"), size=100, flow_id="sparse")
        q.enqueue(probe, d.now)
        sent_at = d.now
        while True:
            r = d.step(names=[f"f{i}" for i in range(4)])
            if r is probe:
                delays.append(d.now - sent_at)
                break
    bound = 4 * 1514 * 8 * 10**9 // rate + 2 * 1514 * 800
    assert max(delays) <= bound


def test_strict_priority_mode():
    q = cake(diffserv=DiffServMode.DIFFSERV8_STRICT)
    d = Driver(q, {"f0": flow_template(0, dscp=0), "f1": flow_template(1, dscp=56)})
    d.run_packets(300)
    assert {p.flow_id for _, p in d.sent} == {"f1"}


def test_ack_filter_drop_is_accounted():
    from conftest import ack
    q = cake(ack_filter=AckFilterMode.AGGRESSIVE)
    q.enqueue(ack(1000), 0)
    q.enqueue(ack(2000), 0)
    assert q.stats.dropped_pkts["ack_filter"] == 1
    assert q.backlog_pkts == 1
    q.check_invariants()


# -- randomized invariants ---------------------------------------------------------

def random_ops(seed: int, n: int, q):
    r = random.Random(seed)
    now = 0
    delivered = []
    hosts = [ip(f"10.0.0.{i}") for i in range(2, 6)]
    for _ in range(n):
        now += r.randrange(0, 400_000)
        if r.random() < 0.55:
            i = r.randrange(12)
            p = udp(src=hosts[i % 4], dst=ip(f"198.51.100.{i % 5}"), sport=i, size=r.randrange(64, 1515),
                    dscp=(0, CS1, EF, 34)[i % 4], flow_id=i)
            q.enqueue(p, now)
        else:
            res = q.dequeue(now)
            if not isinstance(res, Idle):
                delivered.append(res)
        q.check_invariants()
    return delivered


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32), st.sampled_from(list(DiffServMode)), st.sampled_from(list(IsolationMode)),
       st.sampled_from([0, 10 * MBIT]))
def test_conservation_and_ordering(seed, diffserv, isolation, rate):
    q = CakeQdisc(CakeConfig(shaper=ShaperConfig(rate=rate), diffserv=diffserv,
                             flows=FlowTableConfig(isolation_mode=isolation), memlimit=30_000), salt=seed)
    seqno = iter(range(10**9))
    orig = q.enqueue

    def tagged(p, now):
        p.data = next(seqno)
        return orig(p, now)

    q.enqueue = tagged
    delivered = random_ops(seed, 600, q)
    s = q.stats
    assert s.enqueued_bytes == s.delivered_bytes + sum(s.dropped_bytes.values()) + q.backlog_bytes
    assert s.enqueued_pkts == s.delivered_pkts + sum(s.dropped_pkts.values()) + q.backlog_pkts
    by_flow = defaultdict(list)
    for p in delivered:
        by_flow[p.flow_id].append(p.data)
    for seqs in by_flow.values():
        assert seqs == sorted(seqs)


# -- fifo and fq_codel presets -----------------------------------------------------

def test_fifo_tail_drops_at_limit():
    q2 = FifoQdisc(limit_bytes=3100)
    results = [q2.enqueue(udp(), 0) for _ in range(3)]
    assert results == [EnqueueResult.QUEUED, EnqueueResult.QUEUED, EnqueueResult.DROPPED]
    assert q2.dequeue(0).total_len == 1514
    q2.check_invariants()


def test_fq_codel_preset():
    cfg = CakeConfig.fq_codel()
    assert cfg.flows.ways == 1 and cfg.flows.total_queues == 1024
    assert cfg.flows.isolation_mode is IsolationMode.FLOWS
    assert cfg.diffserv is DiffServMode.BEST_EFFORT and cfg.ack_filter is AckFilterMode.OFF
    assert not cfg.shaper.enabled


def test_tier_clocks_run_at_their_fraction():
    q = shaped_d3()
    assert [t.clock.rate for t in q.tiers] == [Fraction(10 * MBIT) * f for f in TIER_FRACTIONS[DiffServMode.DIFFSERV3]]
    assert isinstance(q.shaper.state, ShaperState)
