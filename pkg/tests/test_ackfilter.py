from collections import deque

import pytest
from hypothesis import given, settings, strategies as st

from cakesim.ackfilter import AckFilterMode, filter_on_enqueue, is_pure_ack, makes_redundant, same_flow
from cakesim.pktmodel import TcpFlag, TcpOption

from conftest import ack, data

AGG, CONS, OFF = AckFilterMode.AGGRESSIVE, AckFilterMode.CONSERVATIVE, AckFilterMode.OFF


def chain(*pkts):
    """Queue the packets in order, recording each one's predecessor as the qdisc does."""
    q = deque()
    prev = {}
    for p in pkts:
        if p.tcp is not None:
            key = (p.src_ip, p.dst_ip, p.src_port, p.dst_port)
            p.ack_prev = prev.get(key)
            prev[key] = (p.tcp.ack, p.tcp.window)
        q.append(p)
    return q


def enqueue(q, new, mode):
    """Append ``new`` the way the qdisc does, then run the filter."""
    last = next((p for p in reversed(q) if same_flow(p, new) and p.tcp is not None), None)
    new.ack_prev = None if last is None else (last.tcp.ack, last.tcp.window)
    q.append(new)
    return filter_on_enqueue(q, new, mode)


def acks(q):
    return [p.tcp.ack for p in q]


# -- is_pure_ack -----------------------------------------------------------------

def test_pure_ack():
    assert is_pure_ack(ack(1000))


def test_data_segment_is_not_pure():
    assert not is_pure_ack(data(1, 100))


def test_fin_is_not_pure():
    assert not is_pure_ack(ack(1000, flags=TcpFlag.ACK | TcpFlag.FIN))


@pytest.mark.parametrize("flag", [TcpFlag.SYN, TcpFlag.RST, TcpFlag.URG])
def test_control_flags_not_pure(flag):
    assert not is_pure_ack(ack(5, flags=TcpFlag.ACK | flag))


def test_ack_flag_required():
    assert not is_pure_ack(ack(5, flags=TcpFlag.PSH))


# -- makes_redundant ---------------------------------------------------------------

def test_larger_ack_makes_redundant():
    old, new = ack(1000), ack(2000)
    assert makes_redundant(new, old)


def test_duplicate_is_not_redundant():
    assert not makes_redundant(ack(1000), ack(1000))


def test_unknown_option_never_redundant():
    assert not makes_redundant(ack(2000), ack(1000, options=[200]))


def test_sequence_wrap():
    assert makes_redundant(ack(5), ack(2**32 - 10))


def test_window_update_preserved():
    q = chain(ack(500, window=1000), ack(1000, window=4000))
    assert not makes_redundant(ack(2000, window=8000), q[1])
    # same window as its predecessor: no update carried
    q = chain(ack(500, window=4000), ack(1000, window=4000))
    assert makes_redundant(ack(2000, window=8000), q[1])


def test_sack_must_be_covered():
    old = ack(1000, sack=[(3000, 4000)])
    assert not makes_redundant(ack(2000), old)
    assert makes_redundant(ack(2000, sack=[(3000, 5000)]), old)
    assert makes_redundant(ack(4000), old)


def test_timestamps_must_not_go_backwards():
    old = ack(1000, tsval=50, tsecr=7)
    assert makes_redundant(ack(2000, tsval=51, tsecr=7), old)
    assert not makes_redundant(ack(2000, tsval=49, tsecr=7), old)
    assert not makes_redundant(ack(2000), old)


def test_ecn_echo_change_preserved():
    assert not makes_redundant(ack(2000), ack(1000, flags=TcpFlag.ACK | TcpFlag.ECE))


def test_extra_known_option_needs_repeat():
    old = ack(1000, options=[TcpOption.WSCALE])
    assert not makes_redundant(ack(2000), old)
    assert makes_redundant(ack(2000, options=[TcpOption.WSCALE]), old)


# -- filter_on_enqueue --------------------------------------------------------------

def test_aggressive_drops_older_ack():
    q = chain(ack(1000))
    victim = enqueue(q, ack(2000), AGG)
    assert victim.tcp.ack == 1000 and acks(q) == [2000]


def test_conservative_keeps_single_ack():
    q = chain(ack(1000))
    assert enqueue(q, ack(2000), CONS) is None
    assert acks(q) == [1000, 2000]


def test_conservative_drops_when_enough_remain():
    q = chain(ack(1000), ack(2000), ack(3000))
    victim = enqueue(q, ack(4000), CONS)
    assert victim is not None
    assert len(q) == 3
    # two redundant ACKs still queued ahead of the newest one
    assert sum(makes_redundant(q[-1], p) for p in list(q)[:-1]) >= 2


def test_off_never_drops():
    q = chain(ack(1000), ack(2000), ack(3000))
    assert enqueue(q, ack(4000), OFF) is None and len(q) == 4


def test_data_segment_stops_scan():
    q = chain(ack(1000), data(1, 100), ack(1500))
    victim = enqueue(q, ack(2000), AGG)
    assert victim.tcp.ack == 1500
    q = chain(ack(1000), data(1, 100))
    assert enqueue(q, ack(2000), AGG) is None


def test_other_flows_are_skipped():
    other = ack(1500, sport=7)
    q = chain(ack(1000), other)
    victim = enqueue(q, ack(2000), AGG)
    assert victim.tcp.ack == 1000
    assert other in q


def test_duplicate_run_is_protected():
    q = chain(ack(1000), ack(1000), ack(1000))
    assert enqueue(q, ack(1000), AGG) is None
    assert enqueue(q, ack(2000), AGG) is None
    assert acks(q) == [1000] * 4 + [2000]


def test_new_data_packet_triggers_nothing():
    q = chain(ack(1000))
    assert enqueue(q, data(1, 10), AGG) is None


# -- properties ---------------------------------------------------------------------

ack_stream = st.lists(
    st.tuples(
        st.integers(0, 3),           # ack increment in segments (0 = duplicate)
        st.sampled_from([65535, 65535, 32768]),
        st.booleans(),               # unknown option
        st.integers(0, 2),           # flow index
        st.booleans(),               # data segment instead of an ack
    ),
    min_size=1, max_size=60,
)


@settings(max_examples=300, deadline=None)
@given(ack_stream, st.sampled_from([AGG, CONS]))
def test_filter_safety(stream, mode):
    q = deque()
    next_ack = [1000, 1000, 1000]
    for step, (inc, window, unknown, f, is_data) in enumerate(stream):
        if is_data:
            pkt = data(step * 10, 10, sport=f)
        else:
            next_ack[f] += inc * 1448
            pkt = ack(next_ack[f], window=window, options=[200] if unknown else (), sport=f)
        pkt.data = step
        before = [p.data for p in q]
        victim = enqueue(q, pkt, mode)
        after = [p.data for p in q]
        if victim is None:
            assert after == before + [step]
            continue
        assert is_pure_ack(victim) and same_flow(victim, pkt)
        assert not victim.tcp.has_unknown_option
        assert victim.tcp.ack != pkt.tcp.ack
        assert victim.tcp.window == pkt.tcp.window or victim.ack_prev[1] == victim.tcp.window
        # nothing else moved
        expect = [d for d in before if d != victim.data] + [step]
        assert after == expect
        assert len(before) + 1 - len(after) == 1
