"""Rate-based virtual clock shaper with overhead and link-layer framing compensation."""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional, Union

from .pktmodel import NS_PER_S, Packet, SimTime, TcpFlag

log = logging.getLogger(__name__)

Rate = Union[int, Fraction]

GBPS = 1_000_000_000


class Framing(enum.Enum):
    NONE = "noatm"
    ATM = "atm"
    PTM = "ptm"


class SplitGso(enum.Enum):
    OFF = "off"
    ON = "on"
    AUTO = "auto"


@dataclass(frozen=True)
class ShaperConfig:
    rate: int = 0  # bits per second, 0 disables shaping
    overhead: int = 0
    framing: Framing = Framing.NONE
    mpu: int = 0
    split_gso: SplitGso = SplitGso.AUTO
    split_threshold: int = GBPS

    def __post_init__(self) -> None:
        if self.rate < 0:
            raise ValueError("rate must be non-negative")
        if self.mpu < 0:
            raise ValueError("mpu must be non-negative")
        if self.framing is not Framing.NONE and self.rate == 0:
            log.warning("%s framing configured without a shaped rate", self.framing.value)

    @property
    def enabled(self) -> bool:
        return self.rate > 0


# Named overhead bundles for common access links. Values are the usual
# per-packet encapsulation overheads for each link type.
OVERHEAD_PRESETS: dict[str, dict] = {
    "raw": dict(overhead=0, framing=Framing.NONE),
    "conservative": dict(overhead=48, framing=Framing.ATM),
    "ipoa-vcmux": dict(overhead=8, framing=Framing.ATM),
    "ipoa-llcsnap": dict(overhead=16, framing=Framing.ATM),
    "bridged-vcmux": dict(overhead=24, framing=Framing.ATM),
    "bridged-llcsnap": dict(overhead=32, framing=Framing.ATM),
    "pppoa-vcmux": dict(overhead=10, framing=Framing.ATM),
    "pppoa-llc": dict(overhead=14, framing=Framing.ATM),
    "pppoe-vcmux": dict(overhead=32, framing=Framing.ATM),
    "pppoe-llcsnap": dict(overhead=40, framing=Framing.ATM),
    "pppoe-ptm": dict(overhead=30, framing=Framing.PTM),
    "bridged-ptm": dict(overhead=22, framing=Framing.PTM),
    "ethernet": dict(overhead=38, mpu=84, framing=Framing.NONE),
    "ether-vlan": dict(overhead=42, mpu=84, framing=Framing.NONE),
    "docsis": dict(overhead=18, mpu=64, framing=Framing.NONE),
}


def raw_adjusted_len(total_len: int, network_offset: int, cfg: ShaperConfig) -> int:
    if network_offset >= total_len:
        raise ValueError("network_offset must be smaller than total_len")
    adj = total_len - network_offset + cfg.overhead
    if adj < cfg.mpu:
        adj = cfg.mpu
    if cfg.framing is Framing.ATM:
        adj = -(-adj // 48) * 53
    elif cfg.framing is Framing.PTM:
        adj = -(-adj // 64) * 65
    return adj


def compute_adjusted_len(total_len: int, network_offset: int, cfg: ShaperConfig) -> int:
    """On-wire size of a packet: network-layer length plus overhead, framed.

    ATM pads to whole 48-byte cell payloads sent as 53-byte cells; PTM pads
    to whole 64-byte blocks and adds one byte to each. Results below one
    byte clamp to 1.
    """
    return max(1, raw_adjusted_len(total_len, network_offset, cfg))


class ShaperState:
    """Virtual transmission clock for one rate.

    Serialisation times are accumulated exactly: ``t_next`` is rounded up to
    the next nanosecond and the sub-nanosecond remainder is carried, so the
    clock never runs ahead of the ideal schedule and never drifts behind it.
    """

    __slots__ = ("t_next", "rate", "_num", "_den", "_rem")

    def __init__(self, rate: Rate, t_next: SimTime = 0) -> None:
        rate = Fraction(rate)
        if rate <= 0:
            raise ValueError("shaper rate must be positive")
        self.rate = rate
        # ns per byte == _num / _den
        self._num = 8 * NS_PER_S * rate.denominator
        self._den = rate.numerator
        self.t_next = t_next
        self._rem = 0

    @property
    def time_per_byte(self) -> int:
        return round(Fraction(self._num, self._den))

    def serialisation_time(self, nbytes: int) -> SimTime:
        return -(-nbytes * self._num // self._den)

    def reset(self, now: SimTime) -> None:
        self.t_next = now
        self._rem = 0

    def advance(self, nbytes: int) -> None:
        x = nbytes * self._num + self._rem
        inc = -(-x // self._den)
        self._rem = x - inc * self._den
        self.t_next += inc


def on_enqueue(state: ShaperState, backlog: int, now: SimTime) -> ShaperState:
    """Pull a clock that is ahead of ``now`` back to ``now`` when the queue is empty.

    This is the enqueue rule as literally written in the shaper's pseudocode.
    The qdisc does not use it (it would let packets out early whenever the
    queue drains between arrivals) and relies on ``restart_after_idle`` instead.
    """
    if backlog == 0 and state.t_next > now:
        state.reset(now)
    return state


def restart_after_idle(state: ShaperState, backlog: int, now: SimTime) -> ShaperState:
    """Restart a clock that fell behind ``now`` while the queue sat empty.

    Without this, credit accumulated during an idle period would let the
    first few packets after it go out back to back.
    """
    if backlog == 0 and state.t_next < now:
        state.reset(now)
    return state


def dequeue_gate(state: ShaperState, now: SimTime) -> Optional[SimTime]:
    """Return the wake-up time if the clock is ahead of ``now``, else None."""
    if state.t_next > now:
        return state.t_next
    return None


def advance_clock(state: ShaperState, adj_len: int) -> ShaperState:
    state.advance(adj_len)
    return state


def should_split(cfg: ShaperConfig) -> bool:
    if cfg.split_gso is SplitGso.ON:
        return True
    if cfg.split_gso is SplitGso.OFF:
        return False
    return cfg.enabled and cfg.rate < cfg.split_threshold


def split_aggregate(pkt: Packet, mss: int, cfg: ShaperConfig) -> list[Packet]:
    """Break a super packet into MSS-sized segments when shaping below the threshold.

    Each segment keeps the aggregate's headers; TCP sequence numbers advance
    by the payload carried so far and FIN/PSH stay on the final segment only.
    """
    if mss <= 0:
        raise ValueError("mss must be positive")
    if pkt.payload_len == 0 or pkt.payload_len <= mss or not should_split(cfg):
        return [pkt]
    header = pkt.total_len - pkt.payload_len
    out: list[Packet] = []
    offset = 0
    while offset < pkt.payload_len:
        chunk = min(mss, pkt.payload_len - offset)
        seg = pkt.copy()
        seg.payload_len = chunk
        seg.total_len = header + chunk
        seg.gso_segs = 1
        if seg.tcp is not None:
            seg.tcp.seq = (pkt.tcp.seq + offset) & 0xFFFFFFFF
            if offset + chunk < pkt.payload_len:
                seg.tcp.flags &= ~(TcpFlag.FIN | TcpFlag.PSH)
        out.append(seg)
        offset += chunk
    return out


class Shaper:
    """A shaper configuration bound to its clock and diagnostic counters."""

    def __init__(self, cfg: ShaperConfig) -> None:
        self.cfg = cfg
        self.state: Optional[ShaperState] = ShaperState(cfg.rate) if cfg.enabled else None
        self.clamped = 0

    def adjusted_len(self, pkt: Packet) -> int:
        adj = raw_adjusted_len(pkt.total_len, pkt.network_offset, self.cfg)
        if adj < 1:
            self.clamped += 1
            adj = 1
        pkt.adj_len = adj
        return adj
