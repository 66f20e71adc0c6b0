"""Dumbbell topology: LAN hosts and WAN hosts joined by one bottleneck in each direction.

Access links are ideal (no delay, no serialisation), so the only queues are
the qdiscs on the ``up`` (lan to wan) and ``down`` (wan to lan) links. When
NAT is on, LAN sources are translated before the uplink qdisc and inbound
packets are translated back after the downlink.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Callable, Optional

from ..flowtable import NatTable
from ..pktmodel import NS_PER_MS, Packet, Protocol, SimTime, ip
from ..scheduler import DropReason
from .endpoints import FixedRateSender, PingProbe, UdpSink, echo_reply
from .events import EventLoop
from .link import Link
from .metrics import FlowRecord, MetricsLog, Recorder
from .nat import nat_reverse, nat_translate
from .tcp import TCP_HEADER_TS, TcpReceiver, TcpSender

IP_HEADER = 20


class TopologyError(ValueError):
    pass


class Host:
    def __init__(self, net: "Network", name: str, addr: bytes, side: str) -> None:
        self.net = net
        self.name = name
        self.addr = addr
        self.side = side
        self.recorder = net.recorder
        self._handlers: dict[tuple[int, int], Callable[[Packet], None]] = {}
        self._next_port = 10000
        self.unbound = 0

    def alloc_port(self) -> int:
        self._next_port += 1
        return self._next_port

    def bind(self, proto: Protocol, port: int, handler: Callable[[Packet], None]) -> None:
        key = (int(proto), port)
        if key in self._handlers:
            raise TopologyError(f"{self.name}: port {port}/{proto.name} already bound")
        self._handlers[key] = handler

    def send(self, pkt: Packet) -> None:
        self.net.forward(self, pkt)

    def receive(self, pkt: Packet) -> None:
        if pkt.kind == "echo-req":
            self.send(echo_reply(pkt))
            return
        h = self._handlers.get((int(pkt.protocol), pkt.dst_port))
        if h is None:
            self.unbound += 1
            return
        h(pkt)


@dataclass
class FlowHandle:
    flow_id: str
    kind: str
    direction: str
    sender: object
    receiver: object


class Network:
    def __init__(self, scenario, audit: bool = False, seed: Optional[int] = None) -> None:
        self.scenario = scenario
        self.seed = scenario.seed if seed is None else seed
        self.rng = random.Random(self.seed)
        self.loop = EventLoop()
        self.recorder = Recorder(scenario.interval, scenario.duration)
        self.nat = NatTable(ip(scenario.public_addr)) if scenario.nat else None
        self.hosts: dict[str, Host] = {}
        self._by_addr: dict[bytes, Host] = {}
        self.flows: dict[str, FlowHandle] = {}
        self.misrouted = 0
        for h in scenario.hosts:
            host = Host(self, h.name, ip(h.addr), h.side)
            self.hosts[h.name] = host
            self._by_addr[host.addr] = host
        if self.nat is not None and self.nat.public_ip in self._by_addr:
            raise TopologyError("public NAT address collides with a host address")
        self.links: dict[str, Link] = {}
        for direction in ("up", "down"):
            lc = scenario.links[direction]
            salt = self.rng.getrandbits(32)
            qdisc = lc.qdisc.build(salt=salt, nat_table=self.nat)
            qdisc.on_drop = self._on_drop
            deliver = self._deliver_wan if direction == "up" else self._deliver_lan
            self.links[direction] = Link(self.loop, direction, lc.rate, lc.delay, qdisc, deliver,
                                         overhead=lc.overhead, audit=audit)
        for ep in scenario.endpoints:
            self._add_endpoint(ep)

    # -- routing ---------------------------------------------------------

    def forward(self, host: Host, pkt: Packet) -> None:
        if host.side == "lan":
            nat_translate(pkt, self.nat)
            self.links["up"].send(pkt)
        else:
            self.links["down"].send(pkt)

    def _deliver_wan(self, pkt: Packet) -> None:
        h = self._by_addr.get(pkt.dst_ip)
        if h is None or h.side != "wan":
            self.misrouted += 1
            return
        h.receive(pkt)

    def _deliver_lan(self, pkt: Packet) -> None:
        nat_reverse(pkt, self.nat)
        h = self._by_addr.get(pkt.dst_ip)
        if h is None or h.side != "lan":
            self.misrouted += 1
            return
        h.receive(pkt)

    def _on_drop(self, pkt: Packet, reason: DropReason) -> None:
        self.recorder.drop(pkt.flow_id, self.loop.now, reason.value)

    # -- endpoints -------------------------------------------------------

    def _address_of(self, src: Host, dst: Host, proto: Protocol, dst_port: int) -> tuple[bytes, int]:
        """Where ``src`` must send to reach ``dst:dst_port`` (public side if behind NAT)."""
        if self.nat is not None and dst.side == "lan" and src.side == "wan":
            return self.nat.public_ip, self.nat.translate_out(int(proto), dst.addr, dst_port)
        return dst.addr, dst_port

    def base_latency(self, direction: str, size: int, reply_size: Optional[int] = None) -> SimTime:
        """Propagation plus serialisation on an empty path (one way, or a round trip)."""
        fwd = self.links[direction]
        t = fwd.delay + fwd.serialisation_time(size + fwd.overhead)
        if reply_size is not None:
            back = self.links["down" if direction == "up" else "up"]
            t += back.delay + back.serialisation_time(reply_size + back.overhead)
        return t

    def _start_time(self, start: SimTime) -> SimTime:
        j = self.scenario.jitter
        return start + (self.rng.randrange(j + 1) if j > 0 else 0)

    def _add_endpoint(self, ep) -> None:
        src = self.hosts.get(ep.src)
        dst = self.hosts.get(ep.dst)
        if src is None or dst is None:
            raise TopologyError(f"flow {ep.name}: undefined host {ep.src if src is None else ep.dst!r}")
        if src.side == dst.side:
            raise TopologyError(f"flow {ep.name}: endpoints on the same side")
        direction = "up" if src.side == "lan" else "down"
        stop = ep.stop
        for fid in ep.instance_ids():
            if fid in self.flows:
                raise TopologyError(f"duplicate flow id {fid}")
            start = self._start_time(ep.start)
            rec = FlowRecord(fid, ep.type, direction, src.name, dst.name, ep.dscp)
            self.recorder.add_flow(rec)
            if ep.type == "tcp":
                sport, dport = src.alloc_port(), dst.alloc_port()
                isn = self.rng.getrandbits(32)
                peer_ip, peer_port = self._address_of(src, dst, Protocol.TCP, dport)
                ack_ip, ack_port = src.addr, sport
                if direction == "up" and self.nat is not None:
                    ack_ip = self.nat.public_ip
                    ack_port = self.nat.translate_out(int(Protocol.TCP), src.addr, sport)
                recv = TcpReceiver(self.loop, dst, fid, dport, ack_ip, ack_port, self.recorder,
                                   isn=isn, delayed_ack=ep.delayed_ack)
                send = TcpSender(self.loop, src, fid, sport, peer_ip, peer_port, self.recorder,
                                 mss=ep.mss, dscp=ep.dscp, isn=isn, start=start, stop=stop,
                                 gso_segs=ep.gso, beta=ep.beta)
                size = IP_HEADER + TCP_HEADER_TS + ep.mss
                rec.base_latency_ns = self.base_latency(direction, size, IP_HEADER + TCP_HEADER_TS)
                self.flows[fid] = FlowHandle(fid, "tcp", direction, send, recv)
            elif ep.type == "udp":
                dport = dst.alloc_port()
                sink = UdpSink(self.loop, dst, fid, dport, self.recorder)
                peer_ip, peer_port = self._address_of(src, dst, Protocol.UDP, dport)
                sender = FixedRateSender(self.loop, src, fid, src.alloc_port(), peer_ip, peer_port,
                                         ep.rate, ep.size, dscp=ep.dscp, start=start, stop=stop)
                rec.base_latency_ns = self.base_latency(direction, ep.size)
                self.flows[fid] = FlowHandle(fid, "udp", direction, sender, sink)
            else:
                size = ep.size or 64
                ident = src.alloc_port()
                if self.nat is not None and direction == "down":
                    raise TopologyError(f"flow {fid}: probes must originate on the lan side with NAT")
                probe = PingProbe(self.loop, src, fid, ident, dst.addr, self.recorder, ep.interval,
                                  proto=ep.proto, size=size, dscp=ep.dscp, start=start, stop=stop)
                rec.base_latency_ns = self.base_latency(direction, size, size)
                self.flows[fid] = FlowHandle(fid, "ping", direction, probe, None)

    # -- running ---------------------------------------------------------

    def run(self) -> MetricsLog:
        from ..harness.scenario import serialise_scenario

        self.loop.run(self.scenario.duration)
        return MetricsLog.from_recorder(self.recorder, self.seed, serialise_scenario(self.scenario),
                                        self.link_report(), self.loop.executed)

    def link_report(self) -> dict:
        out = {}
        for name, link in self.links.items():
            q = link.qdisc
            out[name] = {
                "rate_bps": link.rate,
                "delay_ms": link.delay / NS_PER_MS,
                "sent_pkts": link.sent_pkts,
                "sent_bytes": link.sent_bytes,
                "max_backlog_bytes": link.max_backlog_bytes,
                "backlog_pkts": q.backlog_pkts,
                "qdisc": q.stats.as_dict(),
                "tier_bytes": q.tier_bytes(),
            }
        return out


def run(scenario, duration: Optional[SimTime] = None, seed: Optional[int] = None,
        audit: bool = False) -> MetricsLog:
    """Simulate ``scenario`` and return its metrics.

    ``duration`` and ``seed`` override the scenario's own values. Identical
    inputs give identical logs.
    """
    from dataclasses import replace

    if duration is not None:
        if duration <= 0:
            raise ValueError("duration must be positive")
        scenario = replace(scenario, duration=duration)
    if seed is not None:
        scenario = replace(scenario, seed=seed)
    return Network(scenario, audit=audit).run()

