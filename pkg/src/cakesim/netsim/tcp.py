"""Reno-style bulk TCP: slow start, congestion avoidance, SACK-driven fast recovery.

Connections start established (no handshake). Sequence numbers on the wire
are 32-bit and start at a per-connection ISN; both ends keep 64-bit byte
offsets internally and unwrap incoming numbers against them.
"""

from __future__ import annotations

from collections import deque
from typing import Optional

from ..pktmodel import NS_PER_MS, NS_PER_S, SEQ_MASK, Packet, Protocol, SimTime, TcpFlag, TcpInfo, TcpOption
from .events import EventLoop
from .metrics import Recorder

ETH_HEADER = 14
IP_HEADER = 20
TS_OPTIONS = (TcpOption.NOP, TcpOption.NOP, TcpOption.TIMESTAMP)
TCP_HEADER_TS = 32
TCP_HEADER_TS_SACK = {n: 20 + 12 + (2 + 2 + 8 * n) for n in range(1, 5)}

MIN_RTO = 200 * NS_PER_MS
MAX_RTO = 60 * NS_PER_S
INITIAL_RTO = 1 * NS_PER_S
DUPACK_THRESHOLD = 3
DELACK_TIMEOUT = 40 * NS_PER_MS
RWND = 65535


def _unwrap(wire: int, isn: int, ref: int) -> int:
    """Absolute offset for a 32-bit wire value, nearest to absolute ``ref``."""
    d = (wire - isn - ref) & SEQ_MASK
    if d >= 0x80000000:
        d -= 1 << 32
    return ref + d


def _ms32(t: SimTime) -> int:
    return (t // NS_PER_MS) & SEQ_MASK


class _Segment:
    __slots__ = ("start", "end", "sent", "retrans", "sacked", "lost")

    def __init__(self, start: int, end: int, sent: SimTime) -> None:
        self.start = start
        self.end = end
        self.sent = sent
        self.retrans = False
        self.sacked = False
        self.lost = False


class TcpSender:
    """Bulk sender with Reno congestion control and SACK-based loss recovery.

    The scoreboard holds every unacknowledged segment. In recovery a segment
    counts as lost once ``DUPACK_THRESHOLD`` segments above it are SACKed,
    and transmissions are clocked by the estimated pipe rather than by
    inflating cwnd. The receive window is treated as unlimited.

    On loss the window shrinks to ``beta`` times the pipe. The default 0.7
    matches the decrease used by the stock Linux sender; 0.5 is classic Reno.
    """

    def __init__(
        self,
        loop: EventLoop,
        host,
        flow_id: str,
        port: int,
        peer_ip: bytes,
        peer_port: int,
        recorder: Recorder,
        mss: int = 1448,
        dscp: int = 0,
        isn: int = 0,
        start: SimTime = 0,
        stop: Optional[SimTime] = None,
        gso_segs: int = 1,
        initial_cwnd: int = 10,
        beta: float = 0.7,
    ) -> None:
        self.loop = loop
        self.host = host
        self.flow_id = flow_id
        self.port = port
        self.peer_ip = peer_ip
        self.peer_port = peer_port
        self.recorder = recorder
        self.mss = mss
        self.dscp = dscp
        self.isn = isn & SEQ_MASK
        self.stop = stop
        self.gso_segs = max(1, gso_segs)
        self.beta = beta

        self.snd_una = 0
        self.snd_max = 0
        self.cwnd = initial_cwnd * mss
        self.ssthresh = 1 << 62
        self._ca_acc = 0
        self.dupacks = 0
        self.in_recovery = False
        self.recover = 0
        self.srtt: Optional[SimTime] = None
        self.rttvar = 0
        self.rto = INITIAL_RTO
        self._rto_deadline: Optional[SimTime] = None
        self._rto_timer_at: Optional[SimTime] = None
        self.segments: deque[_Segment] = deque()
        self.pipe = 0
        self.sacked_bytes = 0
        self.ts_recent = 0
        self.retransmits = 0
        self.timeouts = 0
        self.fast_retransmits = 0
        self.acks_received = 0
        self.dupacks_received = 0
        host.bind(Protocol.TCP, port, self.receive)
        loop.schedule(start, self._try_send)

    # -- sending ---------------------------------------------------------

    def _next_lost(self) -> Optional[_Segment]:
        for seg in self.segments:
            if seg.lost and not seg.retrans and not seg.sacked:
                return seg
        return None

    def _try_send(self) -> None:
        mss = self.mss
        while True:
            room = self.cwnd - self.pipe
            if room < mss and self.pipe > 0:
                return
            seg = self._next_lost() if (self.in_recovery or self._lost_pending) else None
            if seg is not None:
                seg.retrans = True
                seg.sent = self.loop.now
                self.pipe += seg.end - seg.start
                self.retransmits += 1
                self._transmit(seg.start, seg.end - seg.start)
                if seg is self.segments[0]:
                    self._arm_rto()
                continue
            self._lost_pending = False
            if self.stop is not None and self.loop.now >= self.stop:
                return
            segs = max(1, min(self.gso_segs, room // mss)) if self.gso_segs > 1 else 1
            length = segs * mss
            seg = _Segment(self.snd_max, self.snd_max + length, self.loop.now)
            self.segments.append(seg)
            self.snd_max += length
            self.pipe += length
            self.recorder.flows[self.flow_id].sent_pkts += 1
            self._transmit(seg.start, length)

    _lost_pending = False

    def _transmit(self, offset: int, length: int) -> None:
        now = self.loop.now
        tcp = TcpInfo.__new__(TcpInfo)
        tcp.seq = (self.isn + offset) & SEQ_MASK
        tcp.ack = 1
        tcp.flags = TcpFlag.ACK | TcpFlag.PSH
        tcp.window = RWND
        tcp.sack_blocks = ()
        tcp.options = TS_OPTIONS
        tcp.tsval = _ms32(now)
        tcp.tsecr = self.ts_recent
        pkt = Packet.__new__(Packet)
        pkt.src_ip = self.host.addr
        pkt.dst_ip = self.peer_ip
        pkt.src_port = self.port
        pkt.dst_port = self.peer_port
        pkt.protocol = Protocol.TCP
        pkt.dscp = self.dscp
        pkt.payload_len = length
        pkt.total_len = ETH_HEADER + IP_HEADER + TCP_HEADER_TS + length
        pkt.network_offset = ETH_HEADER
        pkt.adj_len = 0
        pkt.tcp = tcp
        pkt.gso_segs = -(-length // self.mss)
        pkt.enqueue_time = 0
        pkt.first_sent_time = now
        pkt.internal_src_ip = None
        pkt.internal_dst_ip = None
        pkt.flow_id = self.flow_id
        pkt.kind = "data"
        pkt.ack_prev = None
        pkt.data = None
        if self._rto_deadline is None:
            self._arm_rto()
        self.host.send(pkt)

    # -- retransmission timer --------------------------------------------

    def _arm_rto(self) -> None:
        self._rto_deadline = self.loop.now + self.rto
        if self._rto_timer_at is None:
            self._rto_timer_at = self._rto_deadline
            self.loop.schedule(self._rto_deadline, self._rto_fire)

    def _rto_fire(self) -> None:
        self._rto_timer_at = None
        dl = self._rto_deadline
        if dl is None:
            return
        if self.loop.now < dl:
            self._rto_timer_at = dl
            self.loop.schedule(dl, self._rto_fire)
            return
        self._on_timeout()

    def _on_timeout(self) -> None:
        self.timeouts += 1
        flight = self.snd_max - self.snd_una
        self.ssthresh = max(int(flight * self.beta), 2 * self.mss)
        self.cwnd = self.mss
        self._ca_acc = 0
        self.in_recovery = False
        self.dupacks = 0
        # everything not SACKed is presumed lost and goes again
        pipe = 0
        for seg in self.segments:
            if not seg.sacked:
                seg.lost = True
                seg.retrans = False
        self.pipe = pipe
        self._lost_pending = True
        self.rto = min(self.rto * 2, MAX_RTO)
        self._rto_deadline = None
        self._arm_rto()
        self._try_send()

    # -- receiving ACKs ----------------------------------------------------

    def _rtt_sample(self, sample: SimTime) -> None:
        if self.srtt is None:
            self.srtt = sample
            self.rttvar = sample // 2
        else:
            err = sample - self.srtt
            self.srtt += err // 8
            self.rttvar += (abs(err) - self.rttvar) // 4
        self.rto = min(max(MIN_RTO, self.srtt + 4 * self.rttvar), MAX_RTO)
        self.recorder.rtt(self.flow_id, self.loop.now, sample)

    def _in_pipe(self, seg: _Segment) -> bool:
        return not seg.sacked and (not seg.lost or seg.retrans)

    def _apply_sack(self, blocks) -> bool:
        """Mark segments covered by SACK blocks; True if anything new was learnt."""
        if not blocks:
            return False
        ranges = []
        for s, e in blocks:
            start = _unwrap(s, self.isn, self.snd_una)
            end = _unwrap(e, self.isn, self.snd_una)
            if end > start and end <= self.snd_max:
                ranges.append((start, end))
        if not ranges:
            return False
        changed = False
        for seg in self.segments:
            if seg.sacked:
                continue
            for start, end in ranges:
                if start <= seg.start and seg.end <= end:
                    if self._in_pipe(seg):
                        self.pipe -= seg.end - seg.start
                    seg.sacked = True
                    self.sacked_bytes += seg.end - seg.start
                    changed = True
                    break
        return changed

    def _mark_losses(self) -> None:
        """A segment is lost once DUPACK_THRESHOLD segments above it are SACKed."""
        above = 0
        for seg in reversed(self.segments):
            if seg.sacked:
                above += 1
            elif above >= DUPACK_THRESHOLD and not seg.lost:
                if self._in_pipe(seg):
                    self.pipe -= seg.end - seg.start
                seg.lost = True
                seg.retrans = False

    def _enter_recovery(self) -> None:
        mss = self.mss
        self.ssthresh = max(int(self.pipe * self.beta), 2 * mss)
        self.cwnd = self.ssthresh
        self._ca_acc = 0
        self.recover = self.snd_max
        self.in_recovery = True
        self.fast_retransmits += 1
        head = self.segments[0]
        if not head.lost and not head.sacked:
            if self._in_pipe(head):
                self.pipe -= head.end - head.start
            head.lost = True
            head.retrans = False
        # the first retransmission goes out at once, whatever the pipe says,
        # and the timer restarts so the repaired hole gets a full RTO
        if head.lost and not head.retrans and not head.sacked:
            head.retrans = True
            head.sent = self.loop.now
            self.pipe += head.end - head.start
            self.retransmits += 1
            self._transmit(head.start, head.end - head.start)
            self._arm_rto()

    def receive(self, pkt: Packet) -> None:
        tcp = pkt.tcp
        if tcp is None or not tcp.flags & TcpFlag.ACK:
            return
        now = self.loop.now
        self.acks_received += 1
        if tcp.tsval is not None:
            self.ts_recent = tcp.tsval
        ack = _unwrap(tcp.ack, self.isn, self.snd_una)
        if ack > self.snd_max:
            return
        mss = self.mss
        segs = self.segments
        sacked_new = self._apply_sack(tcp.sack_blocks)
        if ack > self.snd_una:
            acked = ack - self.snd_una
            self.snd_una = ack
            sample = None
            while segs and segs[0].end <= ack:
                seg = segs.popleft()
                if seg.sacked:
                    self.sacked_bytes -= seg.end - seg.start
                elif self._in_pipe(seg):
                    self.pipe -= seg.end - seg.start
                sample = None if seg.retrans else now - seg.sent
            if sample is not None:
                self._rtt_sample(sample)
            self.dupacks = 0
            if self.in_recovery:
                if ack >= self.recover:
                    self.in_recovery = False
                    self.cwnd = self.ssthresh
                else:
                    self._mark_losses()
                    self._lost_pending = True
            elif self.cwnd < self.ssthresh:
                self.cwnd += min(acked, 2 * mss)
            else:
                self._ca_acc += acked
                if self._ca_acc >= self.cwnd:
                    self._ca_acc -= self.cwnd
                    self.cwnd += mss
            if self.snd_una == self.snd_max:
                self._rto_deadline = None
            else:
                self._arm_rto()
        elif ack == self.snd_una and segs and pkt.payload_len == 0:
            self.dupacks_received += 1
            self.dupacks += 1
            if sacked_new:
                self._mark_losses()
            if not self.in_recovery and (self.dupacks >= DUPACK_THRESHOLD or segs[0].lost):
                self._enter_recovery()
            if self.in_recovery:
                self._lost_pending = True
        self._try_send()


class TcpReceiver:
    """Cumulative-ACK receiver with delayed ACKs and SACK reporting."""

    def __init__(
        self,
        loop: EventLoop,
        host,
        flow_id: str,
        port: int,
        peer_ip: bytes,
        peer_port: int,
        recorder: Recorder,
        isn: int = 0,
        dscp: int = 0,
        delayed_ack: bool = True,
        ack_every: int = 2,
    ) -> None:
        self.loop = loop
        self.host = host
        self.flow_id = flow_id
        self.port = port
        self.peer_ip = peer_ip
        self.peer_port = peer_port
        self.recorder = recorder
        self.isn = isn & SEQ_MASK
        self.dscp = dscp
        self.delayed_ack = delayed_ack
        self.ack_every = ack_every if delayed_ack else 1
        self.rcv_nxt = 0
        self.ooo: list[list[int]] = []
        self._unacked = 0
        self._delack_deadline: Optional[SimTime] = None
        self._delack_timer_at: Optional[SimTime] = None
        self.ts_recent: Optional[int] = None
        self.acks_sent = 0
        self.dupacks_sent = 0
        self.delivered = 0
        self._last_sent_ack: Optional[int] = None
        host.bind(Protocol.TCP, port, self.receive)

    def receive(self, pkt: Packet) -> None:
        tcp = pkt.tcp
        if tcp is None or pkt.payload_len == 0:
            return
        if tcp.tsval is not None:
            self.ts_recent = tcp.tsval
        start = _unwrap(tcp.seq, self.isn, self.rcv_nxt)
        end = start + pkt.payload_len
        if end <= self.rcv_nxt:
            self._send_ack(None)
            return
        if start <= self.rcv_nxt:
            had_holes = bool(self.ooo)
            self.rcv_nxt = end
            while self.ooo and self.ooo[0][0] <= self.rcv_nxt:
                s, e = self.ooo.pop(0)
                if e > self.rcv_nxt:
                    self.rcv_nxt = e
            advance = self.rcv_nxt - self.delivered
            self.delivered = self.rcv_nxt
            self.recorder.goodput(self.flow_id, self.loop.now, advance)
            if had_holes:
                self._send_ack(None)
                return
            self._unacked += 1
            if self._unacked >= self.ack_every:
                self._send_ack(None)
            else:
                self._arm_delack()
            return
        self._insert_ooo(start, end)
        self._send_ack((start, end))

    def _insert_ooo(self, start: int, end: int) -> None:
        blocks = self.ooo
        blocks.append([start, end])
        blocks.sort()
        merged = [blocks[0]]
        for s, e in blocks[1:]:
            if s <= merged[-1][1]:
                if e > merged[-1][1]:
                    merged[-1][1] = e
            else:
                merged.append([s, e])
        self.ooo = merged

    def _arm_delack(self) -> None:
        now = self.loop.now
        if self._delack_deadline is None:
            self._delack_deadline = now + DELACK_TIMEOUT
        if self._delack_timer_at is None:
            self._delack_timer_at = self._delack_deadline
            self.loop.schedule(self._delack_deadline, self._delack_fire)

    def _delack_fire(self) -> None:
        self._delack_timer_at = None
        dl = self._delack_deadline
        if dl is None:
            return
        if self.loop.now < dl:
            self._delack_timer_at = dl
            self.loop.schedule(dl, self._delack_fire)
            return
        self._send_ack(None)

    def _sack_blocks(self, latest: Optional[tuple[int, int]]) -> tuple:
        if not self.ooo:
            return ()
        first = None
        if latest is not None:
            for b in self.ooo:
                if b[0] <= latest[0] and latest[1] <= b[1]:
                    first = b
                    break
        ordered = ([first] if first else []) + [b for b in reversed(self.ooo) if b is not first]
        isn = self.isn
        return tuple(((isn + s) & SEQ_MASK, (isn + e) & SEQ_MASK) for s, e in ordered[:3])

    def _send_ack(self, latest: Optional[tuple[int, int]]) -> None:
        now = self.loop.now
        self._unacked = 0
        self._delack_deadline = None
        sack = self._sack_blocks(latest)
        tcp = TcpInfo.__new__(TcpInfo)
        tcp.seq = 1
        tcp.ack = (self.isn + self.rcv_nxt) & SEQ_MASK
        tcp.flags = TcpFlag.ACK
        tcp.window = RWND
        tcp.sack_blocks = sack
        tcp.tsval = _ms32(now)
        tcp.tsecr = self.ts_recent
        if sack:
            tcp.options = TS_OPTIONS + (TcpOption.NOP, TcpOption.NOP, TcpOption.SACK)
            hdr = TCP_HEADER_TS_SACK[len(sack)]
        else:
            tcp.options = TS_OPTIONS
            hdr = TCP_HEADER_TS
        pkt = Packet.__new__(Packet)
        pkt.src_ip = self.host.addr
        pkt.dst_ip = self.peer_ip
        pkt.src_port = self.port
        pkt.dst_port = self.peer_port
        pkt.protocol = Protocol.TCP
        pkt.dscp = self.dscp
        pkt.payload_len = 0
        pkt.total_len = ETH_HEADER + IP_HEADER + hdr
        pkt.network_offset = ETH_HEADER
        pkt.adj_len = 0
        pkt.tcp = tcp
        pkt.gso_segs = 1
        pkt.enqueue_time = 0
        pkt.first_sent_time = now
        pkt.internal_src_ip = None
        pkt.internal_dst_ip = None
        pkt.flow_id = self.flow_id
        pkt.kind = "ack"
        pkt.ack_prev = None
        pkt.data = None
        self.acks_sent += 1
        if tcp.ack == self._last_sent_ack:
            self.dupacks_sent += 1
        self._last_sent_ack = tcp.ack
        self.host.send(pkt)
