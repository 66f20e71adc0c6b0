from __future__ import annotations

import re
from collections import Counter, defaultdict

import pytest

from cakesim.pktmodel import Packet, Protocol, TcpFlag, TcpInfo, ip
from cakesim.scheduler import Idle

SRC = ip("10.0.0.2")
DST = ip("198.51.100.10")


def udp(src: bytes = SRC, dst: bytes = DST, sport: int = 1000, dport: int = 2000,
        size: int = 1514, dscp: int = 0, flow_id=None) -> Packet:
    return Packet(src, dst, sport, dport, Protocol.UDP, dscp=dscp, total_len=size,
                  payload_len=size - 14 - 28, flow_id=flow_id)


def ack(ack_no: int, window: int = 65535, sack=(), options=(), flags=TcpFlag.ACK,
        src: bytes = SRC, dst: bytes = DST, sport: int = 1000, dport: int = 2000,
        tsval=None, tsecr=None) -> Packet:
    t = TcpInfo(seq=1, ack=ack_no, flags=flags, window=window, sack_blocks=sack,
                options=options, tsval=tsval, tsecr=tsecr)
    return Packet(src, dst, sport, dport, Protocol.TCP, total_len=14 + 20 + t.header_len(),
                  payload_len=0, tcp=t)


def data(seq: int, length: int = 1448, src: bytes = SRC, dst: bytes = DST,
         sport: int = 1000, dport: int = 2000) -> Packet:
    t = TcpInfo(seq=seq, ack=1, flags=TcpFlag.ACK | TcpFlag.PSH)
    return Packet(src, dst, sport, dport, Protocol.TCP, total_len=14 + 20 + 20 + length,
                  payload_len=length, tcp=t)


# -- acceptance report ------------------------------------------------------

class Driver:
    """Keeps selected flows backlogged and records every release."""

    def __init__(self, q, templates: dict, depth: int = 8):
        self.q = q
        self.templates = templates
        self.depth = depth
        self.queued = Counter()
        self.sent = []
        self.now = 0
        q.on_drop = lambda pkt, reason: self.queued.__setitem__(pkt.flow_id, self.queued[pkt.flow_id] - 1)

    def fill(self, names=None):
        for name in names or self.templates:
            while self.queued[name] < self.depth:
                self.q.enqueue(self.templates[name](), self.now)
                self.queued[name] += 1

    def step(self, names=None):
        self.fill(names)
        r = self.q.dequeue(self.now)
        if isinstance(r, Idle):
            assert r.wake is not None and r.wake > self.now
            self.now = r.wake
            return None
        self.queued[r.flow_id] -= 1
        self.sent.append((self.now, r))
        return r

    def run_packets(self, n, names=None):
        while len(self.sent) < n:
            self.step(names)

    def run_until(self, t, names=None):
        while self.now < t:
            self.step(names)


def flow_template(i: int, size: int = 1514, dscp: int = 0, src: str = "10.0.0.2", dst: str = None):
    d = ip(dst or f"198.51.100.{10 + i}")
    return lambda: udp(src=ip(src), dst=d, sport=1000 + i, dport=80, size=size, dscp=dscp, flow_id=f"f{i}")


def bytes_by_flow(sent):
    out = Counter()
    for _, p in sent:
        out[p.flow_id] += p.adj_len
    return out


_CRITERIA = {
    1: "framing oracle",
    2: "shaper precision",
    3: "host isolation",
    4: "diffserv caps",
    5: "diffserv voip latency",
    6: "ack filtering",
    7: "filter safety",
    8: "collision curve",
    9: "invariant suite",
}
_outcomes: dict[int, list[str]] = defaultdict(list)
_measured: dict[int, list[str]] = defaultdict(list)


@pytest.fixture
def measured(request):
    """Record a measured value for the acceptance summary of this test's criterion."""
    n = int(re.search(r"test_criterion_(\d+)", request.node.name).group(1))

    def note(text: str) -> None:
        _measured[n].append(text)
        print(text)
    return note


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


def pytest_runtest_logreport(report):
    m = re.search(r"test_criterion_(\d+)", report.nodeid)
    if m is None:
        return
    n = int(m.group(1))
    if report.when == "call":
        _outcomes[n].append("xfail" if hasattr(report, "wasxfail") else report.outcome)
    elif report.outcome != "passed":
        _outcomes[n].append("error" if report.failed else report.outcome)


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for n, name in _CRITERIA.items():
        got = _outcomes.get(n)
        if not got:
            verdict = "NOT RUN"
        elif all(o == "passed" for o in got):
            verdict = "PASS"
        else:
            verdict = "FAIL"
        terminalreporter.write_line(f"criterion {n} ({name}): {verdict}")
        for text in _measured.get(n, ()):
            terminalreporter.write_line(f"    {text}")
