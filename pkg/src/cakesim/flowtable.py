"""Set-associative flow hashing and per-host quantum scaling."""

from __future__ import annotations

import enum
import hashlib
import struct
from collections import deque
from dataclasses import dataclass
from functools import lru_cache
from typing import NamedTuple, Optional

from .codel import CodelState
from .pktmodel import Packet


class IsolationMode(enum.Enum):
    FLOW_BLIND = "flowblind"
    HOSTS = "hosts"
    FLOWS = "flows"
    SRC_HOST = "srchost"
    DST_HOST = "dsthost"
    TRIPLE = "triple-isolate"


class ListMembership(enum.Enum):
    NONE = 0
    NEW = 1
    OLD = 2


class FlowKey(NamedTuple):
    src_ip: bytes
    dst_ip: bytes
    src_port: int
    dst_port: int
    protocol: int

    def encode(self) -> bytes:
        """Canonical byte encoding: length-prefixed addresses, ports, protocol."""
        return b"".join(
            (
                bytes((len(self.src_ip),)), self.src_ip,
                bytes((len(self.dst_ip),)), self.dst_ip,
                struct.pack("!HHB", self.src_port, self.dst_port, self.protocol),
            )
        )


def flow_key(pkt: Packet) -> FlowKey:
    return FlowKey(pkt.src_ip, pkt.dst_ip, pkt.src_port, pkt.dst_port, int(pkt.protocol))


def _salt_bytes(salt: int) -> bytes:
    return (salt & (2**128 - 1)).to_bytes(16, "little")


@lru_cache(maxsize=1 << 16)
def hash_bytes(data: bytes, salt: int = 0) -> int:
    return int.from_bytes(
        hashlib.blake2b(data, digest_size=4, key=_salt_bytes(salt)).digest(), "little"
    )


def hash_flow(key: FlowKey, salt: int = 0) -> int:
    """Keyed 32-bit hash of a flow key."""
    return hash_bytes(key.encode(), salt)


def hash_host(addr: bytes, salt: int = 0) -> int:
    return hash_bytes(b"h" + addr, salt)


class FlowState:
    """One queue slot of the flow table."""

    __slots__ = (
        "index", "active", "key", "tag", "deficit", "quantum", "src_id", "dst_id",
        "queue", "bytes", "aqm", "membership", "last_ack", "last_window", "last_key",
    )

    def __init__(self, index: int, quantum: int, codel: CodelState) -> None:
        self.index = index
        self.active = False
        self.key: Optional[FlowKey] = None
        self.tag: Optional[int] = None
        self.deficit = 0
        self.quantum = quantum
        self.src_id = 0
        self.dst_id = 0
        self.queue: deque[Packet] = deque()
        self.bytes = 0
        self.aqm = codel
        self.membership = ListMembership.NONE
        self.last_ack: Optional[int] = None
        self.last_window: Optional[int] = None
        self.last_key: Optional[FlowKey] = None

    def __repr__(self) -> str:
        return (
            f"FlowState(index={self.index}, active={self.active}, qlen={len(self.queue)}, "
            f"deficit={self.deficit}, list={self.membership.name})"
        )


class Collision(NamedTuple):
    index: int


@dataclass(frozen=True)
class FlowTableConfig:
    total_queues: int = 1024
    ways: int = 8
    host_buckets: int = 1024
    isolation_mode: IsolationMode = IsolationMode.TRIPLE
    nat_aware: bool = False
    quantum: int = 1514

    def __post_init__(self) -> None:
        if self.ways < 1 or self.total_queues % self.ways:
            raise ValueError("total_queues must be a positive multiple of ways")
        if self.host_buckets < 1:
            raise ValueError("host_buckets must be positive")
        if self.quantum < 1:
            raise ValueError("quantum must be positive")

    @property
    def sets(self) -> int:
        return self.total_queues // self.ways


def host_load_divisor(mode: IsolationMode, refcnt_src: int, refcnt_dst: int) -> int:
    if mode is IsolationMode.TRIPLE:
        return max(refcnt_src, refcnt_dst, 1)
    if mode is IsolationMode.SRC_HOST:
        return max(refcnt_src, 1)
    if mode is IsolationMode.DST_HOST:
        return max(refcnt_dst, 1)
    return 1


def scaled_quantum(quantum: int, mode: IsolationMode, refcnt_src: int, refcnt_dst: int) -> int:
    return max(1, quantum // host_load_divisor(mode, refcnt_src, refcnt_dst))


class NatTable:
    """Address/port translation records for one public address.

    ``translate_out`` allocates an external port for an internal endpoint;
    ``lookup`` recovers the internal endpoint behind an external port.
    """

    def __init__(self, public_ip: bytes, port_range: tuple[int, int] = (40000, 65535)) -> None:
        self.public_ip = public_ip
        self._next_port, self._last_port = port_range
        self._out: dict[tuple[int, bytes, int], int] = {}
        self._in: dict[tuple[int, int], tuple[bytes, int]] = {}

    def __len__(self) -> int:
        return len(self._in)

    def translate_out(self, protocol: int, internal_ip: bytes, internal_port: int) -> int:
        key = (protocol, internal_ip, internal_port)
        port = self._out.get(key)
        if port is None:
            if self._next_port > self._last_port:
                raise NatExhausted("NAT port range exhausted")
            port = self._next_port
            self._next_port += 1
            self._out[key] = port
            self._in[(protocol, port)] = (internal_ip, internal_port)
        return port

    def lookup(self, protocol: int, external_port: int) -> Optional[tuple[bytes, int]]:
        return self._in.get((protocol, external_port))


class NatExhausted(RuntimeError):
    pass


def resolve_nat(pkt: Packet, nat_table: Optional[NatTable]) -> FlowKey:
    """Flow key with internal addresses substituted where a NAT mapping exists."""
    key = flow_key(pkt)
    if nat_table is None:
        return key
    pub = nat_table.public_ip
    proto = int(pkt.protocol)
    src_ip, src_port, dst_ip, dst_port = key.src_ip, key.src_port, key.dst_ip, key.dst_port
    if src_ip == pub:
        m = nat_table.lookup(proto, src_port)
        if m is not None:
            src_ip, src_port = m
            pkt.internal_src_ip = src_ip
    if dst_ip == pub:
        m = nat_table.lookup(proto, dst_port)
        if m is not None:
            dst_ip, dst_port = m
            pkt.internal_dst_ip = dst_ip
    return FlowKey(src_ip, dst_ip, src_port, dst_port, proto)


def _hashing_key(key: FlowKey, mode: IsolationMode) -> FlowKey:
    if mode is IsolationMode.FLOW_BLIND:
        return FlowKey(b"", b"", 0, 0, 0)
    if mode is IsolationMode.HOSTS:
        return FlowKey(key.src_ip, key.dst_ip, 0, 0, 0)
    return key


class FlowTable:
    """k-way set-associative table of flow queues plus host reference counts.

    With ``ways=1`` this degenerates to plain direct hashing, which is how the
    FQ-CoDel comparison mode is built.
    """

    def __init__(self, cfg: FlowTableConfig, salt: int = 0, codel_params=None) -> None:
        self.cfg = cfg
        self.salt = salt
        self._codel_params = codel_params
        self.flows: list[Optional[FlowState]] = [None] * cfg.total_queues
        # per host bucket: active flows with that source / destination host
        self.refcnt_src = [0] * cfg.host_buckets
        self.refcnt_dst = [0] * cfg.host_buckets
        self._allocated: list[FlowState] = []
        self.collisions = 0
        self._sets = cfg.sets
        self._ways = cfg.ways

    def slot(self, index: int) -> FlowState:
        f = self.flows[index]
        if f is None:
            codel = CodelState(self._codel_params) if self._codel_params is not None else CodelState()
            f = self.flows[index] = FlowState(index, self.cfg.quantum, codel)
            self._allocated.append(f)
        return f

    def lookup_or_allocate(self, flow_hash: int) -> "int | Collision":
        """Place a flow hash in its set.

        Returns the queue index holding this hash, a freshly claimed idle slot,
        or ``Collision(index)`` naming the queue the flow must share when all
        ``ways`` slots of the set hold other active flows.
        """
        ways = self._ways
        base = (flow_hash % self._sets) * ways
        flows = self.flows
        for i in range(base, base + ways):
            f = flows[i]
            if f is not None and f.tag == flow_hash:
                return i
        for i in range(base, base + ways):
            f = flows[i]
            if f is None or (not f.active and not f.queue):
                f = self.slot(i)
                f.tag = flow_hash
                return i
        self.collisions += 1
        return Collision(base + (flow_hash // self._sets) % ways)

    def classify(self, pkt: Packet, nat_table: Optional[NatTable] = None) -> tuple[FlowState, int, int]:
        """Resolve the queue and host buckets for a packet."""
        key = resolve_nat(pkt, nat_table) if self.cfg.nat_aware else flow_key(pkt)
        h = hash_flow(_hashing_key(key, self.cfg.isolation_mode), self.salt)
        idx = self.lookup_or_allocate(h)
        if isinstance(idx, Collision):
            idx = idx.index
        flow = self.slot(idx)
        if flow.key is None or not flow.active:
            flow.key = key
        nb = self.cfg.host_buckets
        src_id = hash_host(key.src_ip, self.salt) % nb
        dst_id = hash_host(key.dst_ip, self.salt) % nb
        return flow, src_id, dst_id

    def on_flow_activate(self, flow: FlowState, src_id: int, dst_id: int) -> None:
        if flow.active:
            return
        self.refcnt_src[src_id] += 1
        self.refcnt_dst[dst_id] += 1
        flow.active = True
        flow.src_id = src_id
        flow.dst_id = dst_id

    def on_flow_deactivate(self, flow: FlowState) -> None:
        if not flow.active:
            return
        if self.refcnt_src[flow.src_id] <= 0 or self.refcnt_dst[flow.dst_id] <= 0:
            raise AssertionError("host reference count would go negative")
        self.refcnt_src[flow.src_id] -= 1
        self.refcnt_dst[flow.dst_id] -= 1
        flow.active = False

    def get_quantum(self, flow: FlowState) -> int:
        return scaled_quantum(
            flow.quantum,
            self.cfg.isolation_mode,
            self.refcnt_src[flow.src_id],
            self.refcnt_dst[flow.dst_id],
        )

    def active_flows(self) -> list[FlowState]:
        return [f for f in self._allocated if f.active]

    def check_refcounts(self) -> None:
        """Full-scan consistency check of the host reference counts."""
        src = [0] * len(self.refcnt_src)
        dst = [0] * len(self.refcnt_dst)
        for f in self.active_flows():
            src[f.src_id] += 1
            dst[f.dst_id] += 1
        got_src, got_dst = self.refcnt_src, self.refcnt_dst
        if got_src == src and got_dst == dst:
            return
        i = next(i for i in range(len(src)) if (got_src[i], got_dst[i]) != (src[i], dst[i]))
        raise AssertionError(
            f"host bucket {i}: counted ({got_src[i]}, {got_dst[i]}), scan gives ({src[i]}, {dst[i]})"
        )
