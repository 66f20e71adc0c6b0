"""Non-TCP traffic: isochronous UDP senders and sparse latency probes."""

from __future__ import annotations

from typing import Optional

from ..pktmodel import NS_PER_S, Packet, Protocol, SimTime
from .events import EventLoop
from .metrics import Recorder

ETH_HEADER = 14
UDP_IP_HEADERS = 28
ICMP_IP_HEADERS = 28


def _packet(src_ip: bytes, dst_ip: bytes, sport: int, dport: int, proto: Protocol,
            dscp: int, ip_len: int, payload: int, flow_id: str, kind: str, now: SimTime) -> Packet:
    pkt = Packet(src_ip, dst_ip, sport, dport, proto, dscp=dscp, total_len=ETH_HEADER + ip_len,
                 payload_len=payload)
    pkt.first_sent_time = now
    pkt.flow_id = flow_id
    pkt.kind = kind
    return pkt


class FixedRateSender:
    """Sends ``size``-byte IP packets at exactly ``rate`` bit/s, ignoring loss.

    Departure k happens at ``start + ceil(k * size * 8 / rate)`` seconds, so
    the schedule does not drift however long the run is.
    """

    def __init__(self, loop: EventLoop, host, flow_id: str, port: int, peer_ip: bytes,
                 peer_port: int, rate: int, size: int, dscp: int = 0, start: SimTime = 0,
                 stop: Optional[SimTime] = None) -> None:
        if rate <= 0:
            raise ValueError("fixed-rate flow needs a positive rate")
        if size <= UDP_IP_HEADERS:
            raise ValueError(f"packet size must exceed {UDP_IP_HEADERS} bytes")
        self.loop = loop
        self.host = host
        self.flow_id = flow_id
        self.port = port
        self.peer_ip = peer_ip
        self.peer_port = peer_port
        self.rate = rate
        self.size = size
        self.dscp = dscp
        self.start = start
        self.stop = stop
        self.sent = 0
        loop.schedule(start, self._tick)

    def departure(self, k: int) -> SimTime:
        return self.start + -(-k * self.size * 8 * NS_PER_S // self.rate)

    def _tick(self) -> None:
        now = self.loop.now
        if self.stop is not None and now >= self.stop:
            return
        pkt = _packet(self.host.addr, self.peer_ip, self.port, self.peer_port, Protocol.UDP,
                      self.dscp, self.size, self.size - UDP_IP_HEADERS, self.flow_id, "udp", now)
        self.sent += 1
        self.host.recorder.flows[self.flow_id].sent_pkts += 1
        self.host.send(pkt)
        self.loop.schedule(self.departure(self.sent), self._tick)


class UdpSink:
    """Counts delivered bytes and one-way delay of a fixed-rate flow."""

    def __init__(self, loop: EventLoop, host, flow_id: str, port: int, recorder: Recorder) -> None:
        self.loop = loop
        self.flow_id = flow_id
        self.recorder = recorder
        self.received = 0
        host.bind(Protocol.UDP, port, self.receive)

    def receive(self, pkt: Packet) -> None:
        now = self.loop.now
        self.received += 1
        self.recorder.goodput(self.flow_id, now, pkt.payload_len)
        self.recorder.latency_sample(self.flow_id, now, now - pkt.first_sent_time)


class PingProbe:
    """Periodic echo requests (ICMP or UDP) with RTT recorded per reply."""

    def __init__(self, loop: EventLoop, host, flow_id: str, ident: int, peer_ip: bytes,
                 recorder: Recorder, interval: SimTime, proto: str = "icmp", size: int = 64,
                 dscp: int = 0, start: SimTime = 0, stop: Optional[SimTime] = None) -> None:
        if interval <= 0:
            raise ValueError("probe interval must be positive")
        self.loop = loop
        self.host = host
        self.flow_id = flow_id
        self.ident = ident
        self.peer_ip = peer_ip
        self.recorder = recorder
        self.interval = interval
        self.protocol = Protocol.UDP if proto == "udp" else Protocol.OTHER
        self.peer_port = 7 if proto == "udp" else ident
        self.size = size
        self.dscp = dscp
        self.stop = stop
        self.sent = 0
        self.replies = 0
        host.bind(self.protocol, ident, self.receive)
        loop.schedule(start, self._tick)

    def _tick(self) -> None:
        now = self.loop.now
        if self.stop is not None and now >= self.stop:
            return
        pkt = _packet(self.host.addr, self.peer_ip, self.ident, self.peer_port, self.protocol,
                      self.dscp, self.size, self.size - ICMP_IP_HEADERS, self.flow_id, "echo-req", now)
        self.sent += 1
        self.recorder.flows[self.flow_id].sent_pkts += 1
        self.host.send(pkt)
        self.loop.after(self.interval, self._tick)

    def receive(self, pkt: Packet) -> None:
        if pkt.kind != "echo-rep":
            return
        now = self.loop.now
        self.replies += 1
        self.recorder.latency_sample(self.flow_id, now, now - pkt.first_sent_time)


def echo_reply(pkt: Packet) -> Packet:
    """The reply a host sends for an echo request (addresses and ports swapped)."""
    rep = pkt.copy()
    rep.src_ip, rep.dst_ip = pkt.dst_ip, pkt.src_ip
    rep.src_port, rep.dst_port = pkt.dst_port, pkt.src_port
    rep.internal_src_ip = None
    rep.internal_dst_ip = None
    rep.adj_len = 0
    rep.kind = "echo-rep"
    return rep
