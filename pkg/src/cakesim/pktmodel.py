"""Packet model shared by the qdisc and the simulator.

Times are integer nanoseconds (``SimTime``); sizes are bytes; rates are bits
per second. Addresses are opaque packed byte strings (4 or 16 bytes).
"""

from __future__ import annotations

import enum
import ipaddress
from typing import Optional, Sequence

SimTime = int

NS_PER_US = 1_000
NS_PER_MS = 1_000_000
NS_PER_S = 1_000_000_000

SEQ_MASK = 0xFFFFFFFF


def us(value: float) -> SimTime:
    return round(value * NS_PER_US)


def ms(value: float) -> SimTime:
    return round(value * NS_PER_MS)


def seconds(value: float) -> SimTime:
    return round(value * NS_PER_S)


def to_seconds(t: SimTime) -> float:
    return t / NS_PER_S


def ip(text: str) -> bytes:
    """Pack a textual IPv4/IPv6 address into its opaque byte form."""
    return ipaddress.ip_address(text).packed


def ip_str(addr: bytes) -> str:
    return str(ipaddress.ip_address(addr))


def seq_after(a: int, b: int) -> bool:
    """True when 32-bit sequence number ``a`` is strictly after ``b``."""
    d = (a - b) & SEQ_MASK
    return 0 < d < 0x80000000


def seq_geq(a: int, b: int) -> bool:
    return a == b or seq_after(a, b)


class Protocol(enum.IntEnum):
    OTHER = 0
    TCP = 6
    UDP = 17


class TcpFlag(enum.IntFlag):
    FIN = 0x01
    SYN = 0x02
    RST = 0x04
    PSH = 0x08
    ACK = 0x10
    URG = 0x20
    ECE = 0x40
    CWR = 0x80


class TcpOption(enum.IntEnum):
    EOL = 0
    NOP = 1
    MSS = 2
    WSCALE = 3
    SACK_PERMITTED = 4
    SACK = 5
    TIMESTAMP = 8


KNOWN_OPTIONS = frozenset(int(o) for o in TcpOption)


class TcpInfo:
    """Parsed TCP header fields relevant to queueing decisions."""

    __slots__ = ("seq", "ack", "flags", "window", "sack_blocks", "options", "tsval", "tsecr")

    def __init__(
        self,
        seq: int = 0,
        ack: int = 0,
        flags: int = TcpFlag.ACK,
        window: int = 65535,
        sack_blocks: Sequence[tuple[int, int]] = (),
        options: Sequence[int] = (),
        tsval: Optional[int] = None,
        tsecr: Optional[int] = None,
    ) -> None:
        self.seq = seq & SEQ_MASK
        self.ack = ack & SEQ_MASK
        self.flags = int(flags)
        self.window = window
        self.sack_blocks = tuple((s & SEQ_MASK, e & SEQ_MASK) for s, e in sack_blocks)
        opts = list(options)
        if tsval is not None and TcpOption.TIMESTAMP not in opts:
            opts.append(TcpOption.TIMESTAMP)
        if self.sack_blocks and TcpOption.SACK not in opts:
            opts.append(TcpOption.SACK)
        self.options = tuple(int(o) for o in opts)
        self.tsval = tsval
        self.tsecr = tsecr

    @property
    def options_digest(self) -> tuple[int, ...]:
        return self.options

    @property
    def has_unknown_option(self) -> bool:
        return any(o not in KNOWN_OPTIONS for o in self.options)

    def header_len(self) -> int:
        """TCP header length in bytes implied by the option list."""
        n = 0
        for o in self.options:
            if o in (TcpOption.EOL, TcpOption.NOP):
                n += 1
            elif o == TcpOption.MSS:
                n += 4
            elif o == TcpOption.WSCALE:
                n += 3
            elif o == TcpOption.SACK_PERMITTED:
                n += 2
            elif o == TcpOption.SACK:
                n += 2 + 8 * len(self.sack_blocks)
            elif o == TcpOption.TIMESTAMP:
                n += 10
            else:
                n += 4
        return 20 + (n + 3) // 4 * 4

    def copy(self) -> "TcpInfo":
        t = TcpInfo.__new__(TcpInfo)
        for name in TcpInfo.__slots__:
            setattr(t, name, getattr(self, name))
        return t

    def __repr__(self) -> str:
        return (
            f"TcpInfo(seq={self.seq}, ack={self.ack}, flags={TcpFlag(self.flags)!r}, "
            f"window={self.window}, sack={self.sack_blocks}, opts={self.options})"
        )


class Packet:
    """A simulated datagram.

    ``total_len`` counts every byte handed to the qdisc, including the
    ``network_offset`` bytes of link-layer header in front of the IP header.
    ``adj_len`` is the on-wire size as computed by the shaper at enqueue.
    ``flow_id`` and ``kind`` are simulator bookkeeping and are never hashed.
    """

    __slots__ = (
        "src_ip",
        "dst_ip",
        "src_port",
        "dst_port",
        "protocol",
        "dscp",
        "total_len",
        "network_offset",
        "adj_len",
        "payload_len",
        "tcp",
        "gso_segs",
        "enqueue_time",
        "first_sent_time",
        "internal_src_ip",
        "internal_dst_ip",
        "flow_id",
        "kind",
        "ack_prev",
        "data",
    )

    def __init__(
        self,
        src_ip: bytes,
        dst_ip: bytes,
        src_port: int = 0,
        dst_port: int = 0,
        protocol: Protocol = Protocol.UDP,
        dscp: int = 0,
        total_len: int = 0,
        network_offset: int = 14,
        payload_len: int = 0,
        tcp: Optional[TcpInfo] = None,
        gso_segs: int = 1,
        flow_id=None,
        kind: str = "",
        first_sent_time: SimTime = 0,
        data=None,
    ) -> None:
        if not 0 <= dscp < 64:
            raise ValueError(f"dscp out of range: {dscp}")
        if total_len <= network_offset:
            raise ValueError("total_len must exceed network_offset")
        if payload_len > total_len:
            raise ValueError("payload_len exceeds total_len")
        self.src_ip = src_ip
        self.dst_ip = dst_ip
        self.src_port = src_port
        self.dst_port = dst_port
        self.protocol = protocol
        self.dscp = dscp
        self.total_len = total_len
        self.network_offset = network_offset
        self.adj_len = 0
        self.payload_len = payload_len
        self.tcp = tcp
        self.gso_segs = gso_segs
        self.enqueue_time = 0
        self.first_sent_time = first_sent_time
        self.internal_src_ip = None
        self.internal_dst_ip = None
        self.flow_id = flow_id
        self.kind = kind
        self.ack_prev = None
        self.data = data

    @property
    def net_len(self) -> int:
        return self.total_len - self.network_offset

    @property
    def is_aggregate(self) -> bool:
        return self.gso_segs > 1

    def copy(self) -> "Packet":
        p = Packet.__new__(Packet)
        for name in Packet.__slots__:
            setattr(p, name, getattr(self, name))
        if self.tcp is not None:
            p.tcp = self.tcp.copy()
        return p

    def __repr__(self) -> str:
        return (
            f"Packet({ip_str(self.src_ip)}:{self.src_port} -> {ip_str(self.dst_ip)}:{self.dst_port} "
            f"{self.protocol.name} len={self.total_len} dscp={self.dscp} flow={self.flow_id})"
        )


# DiffServ code points
CS0, CS1, CS2, CS3, CS4, CS5, CS6, CS7 = (8 * i for i in range(8))
AF11, AF12, AF13 = 10, 12, 14
AF21, AF22, AF23 = 18, 20, 22
AF31, AF32, AF33 = 26, 28, 30
AF41, AF42, AF43 = 34, 36, 38
EF = 46
VA = 44
LE = 1
TOS4 = 4

DSCP_NAMES = {
    "CS0": CS0, "BE": CS0, "CS1": CS1, "BK": CS1, "CS2": CS2, "CS3": CS3,
    "CS4": CS4, "CS5": CS5, "CS6": CS6, "CS7": CS7,
    "AF11": AF11, "AF12": AF12, "AF13": AF13, "AF21": AF21, "AF22": AF22, "AF23": AF23,
    "AF31": AF31, "AF32": AF32, "AF33": AF33, "AF41": AF41, "AF42": AF42, "AF43": AF43,
    "EF": EF, "VA": VA, "LE": LE, "TOS4": TOS4,
}


def parse_dscp(text: str) -> int:
    """Accept a code point name (``EF``, ``CS1``...) or a decimal value."""
    name = text.strip().upper()
    if name in DSCP_NAMES:
        return DSCP_NAMES[name]
    value = int(name, 0)
    if not 0 <= value < 64:
        raise ValueError(f"dscp out of range: {text}")
    return value


def dscp_name(value: int) -> str:
    for name, v in DSCP_NAMES.items():
        if v == value and name not in ("BE", "BK"):
            return name
    return str(value)


class DiffServMode(enum.Enum):
    BEST_EFFORT = "besteffort"
    DIFFSERV3 = "diffserv3"
    DIFFSERV4 = "diffserv4"
    DIFFSERV8 = "diffserv8"
    DIFFSERV8_STRICT = "diffserv8-strict"

    @property
    def tiers(self) -> int:
        return len(TIER_NAMES[self])


TIER_NAMES: dict[DiffServMode, tuple[str, ...]] = {
    DiffServMode.BEST_EFFORT: ("BestEffort",),
    DiffServMode.DIFFSERV3: ("Bulk", "BestEffort", "LatencySensitive"),
    DiffServMode.DIFFSERV4: ("Bulk", "BestEffort", "Video", "Voice"),
    DiffServMode.DIFFSERV8: tuple(f"Tier{i}" for i in range(8)),
    DiffServMode.DIFFSERV8_STRICT: tuple(f"Tier{i}" for i in range(8)),
}


def _table(default: int, overrides: dict[int, int]) -> tuple[int, ...]:
    t = [default] * 64
    for code, tier in overrides.items():
        t[code] = tier
    return tuple(t)


# Tier 0 is the lowest priority in every mode.
DSCP_TABLES: dict[DiffServMode, tuple[int, ...]] = {
    DiffServMode.BEST_EFFORT: _table(0, {}),
    DiffServMode.DIFFSERV3: _table(1, {CS1: 0, TOS4: 2, VA: 2, EF: 2, CS6: 2, CS7: 2}),
    # 802.11e access categories (BK, BE, VI, VO) after the RFC 8325 mapping.
    DiffServMode.DIFFSERV4: _table(
        1,
        {
            CS1: 0, LE: 0,
            CS3: 2, AF31: 2, AF32: 2, AF33: 2, CS4: 2, AF41: 2, AF42: 2, AF43: 2, CS5: 2,
            VA: 3, EF: 3, CS6: 3, CS7: 3,
        },
    ),
    DiffServMode.DIFFSERV8: tuple(d >> 3 for d in range(64)),
    DiffServMode.DIFFSERV8_STRICT: tuple(d >> 3 for d in range(64)),
}


def classify_dscp(dscp: int, mode: DiffServMode, table: Optional[Sequence[int]] = None) -> int:
    """Map a code point to a tier index (0 = lowest priority) for ``mode``.

    ``table`` replaces the built-in 64-entry mapping when given.
    """
    if not 0 <= dscp < 64:
        raise ValueError(f"dscp out of range: {dscp}")
    return (table or DSCP_TABLES[mode])[dscp]
