"""The CAKE dequeue engine: DiffServ tiers, per-tier DRR and per-queue CoDel.

Also provides the two comparison disciplines used in experiments: an
FQ-CoDel-equivalent configuration preset and a plain byte-limited FIFO.
"""

from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Callable, NamedTuple, Optional, Sequence

from .ackfilter import AckFilterMode, filter_on_enqueue
from .codel import CodelParams, codel_dequeue
from .flowtable import FlowState, FlowTable, FlowTableConfig, IsolationMode, ListMembership, NatTable
from .pktmodel import TIER_NAMES, DiffServMode, Packet, Protocol, SimTime, classify_dscp
from .shaper import (
    Shaper,
    ShaperConfig,
    ShaperState,
    advance_clock,
    dequeue_gate,
    restart_after_idle,
    should_split,
    split_aggregate,
)

F = Fraction

# Share of the shaped rate given to each tier, lowest priority first. Tier
# clocks enforce these as rate caps when shaping; without a shaper they are
# DRR weights. Best effort takes whatever the marked tiers leave.
TIER_FRACTIONS: dict[DiffServMode, tuple[Fraction, ...]] = {
    DiffServMode.BEST_EFFORT: (F(1),),
    DiffServMode.DIFFSERV3: (F(1, 16), F(11, 16), F(1, 4)),
    DiffServMode.DIFFSERV4: (F(1, 16), F(3, 16), F(1, 2), F(1, 4)),
    DiffServMode.DIFFSERV8: (F(1, 2), F(1, 4), F(1, 8), F(1, 16), F(1, 32), F(1, 64), F(1, 128), F(1, 128)),
    DiffServMode.DIFFSERV8_STRICT: (F(1, 2), F(1, 4), F(1, 8), F(1, 16), F(1, 32), F(1, 64), F(1, 128), F(1, 128)),
}

DEFAULT_MEMLIMIT = 4 * 1024 * 1024


class DropReason(enum.Enum):
    CODEL = "codel"
    OVERLIMIT = "overlimit"
    ACK_FILTER = "ack_filter"
    TAIL = "tail"


class EnqueueResult(enum.Enum):
    QUEUED = "queued"
    DROPPED = "dropped"


class Idle(NamedTuple):
    """Nothing to send now; ``wake`` is when to ask again (None: queue empty)."""

    wake: Optional[SimTime]


@dataclass(frozen=True)
class CakeConfig:
    shaper: ShaperConfig = field(default_factory=ShaperConfig)
    diffserv: DiffServMode = DiffServMode.DIFFSERV3
    flows: FlowTableConfig = field(default_factory=FlowTableConfig)
    ack_filter: AckFilterMode = AckFilterMode.OFF
    codel: CodelParams = field(default_factory=CodelParams)
    memlimit: Optional[int] = None
    dscp_table: Optional[tuple[int, ...]] = None
    mss: int = 1448
    # keep emptied flows (and their host counts) until their AQM state settles
    lazy_retire: bool = True

    def __post_init__(self) -> None:
        if self.dscp_table is not None:
            n = self.diffserv.tiers
            if len(self.dscp_table) != 64 or any(not 0 <= t < n for t in self.dscp_table):
                raise ValueError(f"dscp_table needs 64 entries in range 0..{n - 1}")
        if self.memlimit is not None and self.memlimit <= 0:
            raise ValueError("memlimit must be positive")

    @classmethod
    def fq_codel(cls, quantum: int = 1514, codel: Optional[CodelParams] = None,
                 memlimit: Optional[int] = None) -> "CakeConfig":
        """FQ-CoDel equivalent: one tier, flow fairness, direct hashing into 1024 queues."""
        return cls(
            shaper=ShaperConfig(),
            diffserv=DiffServMode.BEST_EFFORT,
            flows=FlowTableConfig(total_queues=1024, ways=1, isolation_mode=IsolationMode.FLOWS,
                                  quantum=quantum),
            ack_filter=AckFilterMode.OFF,
            codel=codel or CodelParams(),
            memlimit=memlimit,
        )

    def effective_memlimit(self) -> int:
        if self.memlimit is not None:
            return self.memlimit
        bdp15 = 15 * self.shaper.rate * self.codel.interval // (8 * 10**9)
        return max(DEFAULT_MEMLIMIT, bdp15)

    def with_options(self, **kw) -> "CakeConfig":
        return replace(self, **kw)


class Tier:
    __slots__ = (
        "index", "name", "rate_fraction", "clock", "new_flows", "old_flows", "table",
        "weight", "deficit", "backlog_bytes", "backlog_pkts", "sent_bytes", "sent_pkts", "drop",
    )

    def __init__(self, index: int, name: str, fraction: Fraction, table: FlowTable,
                 clock: Optional[ShaperState], weight: int) -> None:
        self.index = index
        self.name = name
        self.rate_fraction = fraction
        self.clock = clock
        self.new_flows: deque[FlowState] = deque()
        self.old_flows: deque[FlowState] = deque()
        self.table = table
        self.weight = weight
        self.deficit = 0
        self.backlog_bytes = 0
        self.backlog_pkts = 0
        self.sent_bytes = 0
        self.sent_pkts = 0
        self.drop: Callable[[Packet], None] = None  # set by the qdisc

    @property
    def t_next(self) -> Optional[SimTime]:
        return self.clock.t_next if self.clock is not None else None

    def __repr__(self) -> str:
        return f"Tier({self.index}:{self.name}, backlog={self.backlog_pkts}, t_next={self.t_next})"


@dataclass
class QdiscStats:
    enqueued_pkts: int = 0
    enqueued_bytes: int = 0
    delivered_pkts: int = 0
    delivered_bytes: int = 0
    dropped_pkts: dict = field(default_factory=lambda: {r.value: 0 for r in DropReason})
    dropped_bytes: dict = field(default_factory=lambda: {r.value: 0 for r in DropReason})
    split_aggregates: int = 0
    clamped_sizes: int = 0

    def as_dict(self) -> dict:
        return {
            "enqueued_pkts": self.enqueued_pkts,
            "enqueued_bytes": self.enqueued_bytes,
            "delivered_pkts": self.delivered_pkts,
            "delivered_bytes": self.delivered_bytes,
            "dropped_pkts": dict(self.dropped_pkts),
            "dropped_bytes": dict(self.dropped_bytes),
            "split_aggregates": self.split_aggregates,
            "clamped_sizes": self.clamped_sizes,
        }


def select_tier(tiers: Sequence[Tier], now: SimTime, strict: bool = False) -> "Tier | Idle":
    """Pick the tier to serve from in shaped mode (global gate already passed).

    The highest-priority backlogged tier whose clock is due wins; otherwise the
    backlogged tier with the earliest clock borrows the slot.
    """
    best: Optional[Tier] = None
    for tier in reversed(tiers):
        if not tier.backlog_pkts:
            continue
        if strict or tier.clock.t_next <= now:
            return tier
        if best is None or tier.clock.t_next < best.clock.t_next:
            best = tier
    if best is None:
        return Idle(None)
    return best


def _still_decaying(st, now: SimTime) -> bool:
    """Whether an emptied queue's AQM state is still settling.

    The drop count decays by one per control-law interval while the queue
    sits empty; the queue counts as at rest once the count reaches zero and
    the next scheduled drop time has passed.
    """
    if st.count and now >= st.drop_next:
        st.count -= 1
        if st.count:
            st.drop_next = st.control_law(st.drop_next)
    return bool(st.count) or now < st.drop_next


class CakeQdisc:
    """One queue-management instance (one link direction)."""

    def __init__(self, cfg: CakeConfig = CakeConfig(), salt: int = 0,
                 nat_table: Optional[NatTable] = None) -> None:
        self.cfg = cfg
        self.nat_table = nat_table if cfg.flows.nat_aware else None
        self.shaper = Shaper(cfg.shaper)
        self.shaped = cfg.shaper.enabled
        self.strict = cfg.diffserv is DiffServMode.DIFFSERV8_STRICT
        self.memlimit = cfg.effective_memlimit()
        self.on_drop: Optional[Callable[[Packet, DropReason], None]] = None
        self.stats = QdiscStats()
        self.backlog_pkts = 0
        self.backlog_bytes = 0
        self._split = should_split(cfg.shaper)
        self._table = cfg.dscp_table
        self.tiers: list[Tier] = []
        fractions = TIER_FRACTIONS[cfg.diffserv]
        names = TIER_NAMES[cfg.diffserv]
        for i, frac in enumerate(fractions):
            clock = ShaperState(cfg.shaper.rate * frac) if self.shaped else None
            table = FlowTable(cfg.flows, salt=salt + i, codel_params=cfg.codel)
            weight = max(1, round(frac * 16 * cfg.flows.quantum))
            tier = Tier(i, names[i], frac, table, clock, weight)
            tier.drop = self._codel_drop_for(tier)
            self.tiers.append(tier)
        self._rr = 0
        self.lazy_retire = cfg.lazy_retire

    # -- enqueue ---------------------------------------------------------

    def enqueue(self, pkt: Packet, now: SimTime) -> EnqueueResult:
        if self._split and pkt.gso_segs > 1:
            parts = split_aggregate(pkt, self.cfg.mss, self.cfg.shaper)
            if len(parts) > 1:
                self.stats.split_aggregates += 1
                results = [self._enqueue_one(p, now) for p in parts]
                return EnqueueResult.DROPPED if all(r is EnqueueResult.DROPPED for r in results) \
                    else EnqueueResult.QUEUED
        return self._enqueue_one(pkt, now)

    def _enqueue_one(self, pkt: Packet, now: SimTime) -> EnqueueResult:
        tier = self.tiers[classify_dscp(pkt.dscp, self.cfg.diffserv, self._table)]
        self.shaper.adjusted_len(pkt)
        self.stats.clamped_sizes = self.shaper.clamped
        flow, src_id, dst_id = tier.table.classify(pkt, self.nat_table)

        if self.shaped:
            # Only a clock that fell behind is restarted. Pulling a clock that is
            # still ahead back to now would let an arrival at an empty queue skip
            # the previous packet's serialisation time.
            restart_after_idle(self.shaper.state, self.backlog_pkts, now)
            restart_after_idle(tier.clock, tier.backlog_pkts, now)

        pkt.enqueue_time = now
        if pkt.protocol == Protocol.TCP and pkt.tcp is not None:
            key = flow_key_tuple(pkt)
            pkt.ack_prev = (flow.last_ack, flow.last_window) if flow.last_key == key else None
            flow.last_key = key
            flow.last_ack = pkt.tcp.ack
            flow.last_window = pkt.tcp.window

        size = pkt.total_len
        flow.queue.append(pkt)
        flow.bytes += size
        tier.backlog_pkts += 1
        tier.backlog_bytes += size
        self.backlog_pkts += 1
        self.backlog_bytes += size
        self.stats.enqueued_pkts += 1
        self.stats.enqueued_bytes += size

        if not flow.active:
            tier.table.on_flow_activate(flow, src_id, dst_id)
            flow.deficit = tier.table.get_quantum(flow)
            flow.membership = ListMembership.NEW
            tier.new_flows.append(flow)

        if self.cfg.ack_filter is not AckFilterMode.OFF:
            victim = filter_on_enqueue(flow.queue, pkt, self.cfg.ack_filter)
            if victim is not None:
                flow.bytes -= victim.total_len
                self._account_drop(victim, tier, DropReason.ACK_FILTER)

        result = EnqueueResult.QUEUED
        while self.backlog_bytes > self.memlimit:
            victim = self._drop_from_fattest()
            if victim is pkt:
                result = EnqueueResult.DROPPED
        return result

    def _drop_from_fattest(self) -> Packet:
        fattest: Optional[FlowState] = None
        fat_tier: Optional[Tier] = None
        for tier in self.tiers:
            for lst in (tier.new_flows, tier.old_flows):
                for f in lst:
                    if f.queue and (fattest is None or f.bytes > fattest.bytes):
                        fattest, fat_tier = f, tier
        victim = fattest.queue.popleft()
        fattest.bytes -= victim.total_len
        self._account_drop(victim, fat_tier, DropReason.OVERLIMIT)
        return victim

    def _account_drop(self, pkt: Packet, tier: Tier, reason: DropReason) -> None:
        size = pkt.total_len
        tier.backlog_pkts -= 1
        tier.backlog_bytes -= size
        self.backlog_pkts -= 1
        self.backlog_bytes -= size
        self.stats.dropped_pkts[reason.value] += 1
        self.stats.dropped_bytes[reason.value] += size
        if self.on_drop is not None:
            self.on_drop(pkt, reason)

    def _codel_drop_for(self, tier: Tier) -> Callable[[Packet], None]:
        def drop(pkt: Packet) -> None:
            self._account_drop(pkt, tier, DropReason.CODEL)
        return drop

    # -- dequeue ---------------------------------------------------------

    def dequeue(self, now: SimTime) -> "Packet | Idle":
        """Release the next packet, or report when the next one becomes eligible."""
        while True:
            if not self.backlog_pkts:
                return Idle(None)
            if self.shaped:
                wake = dequeue_gate(self.shaper.state, now)
                if wake is not None:
                    return Idle(wake)
                tier = select_tier(self.tiers, now, self.strict)
            else:
                tier = self.unshaped_tier_schedule()
            pkt = self._tier_dequeue(tier, now)
            if pkt is None:
                continue
            size = pkt.total_len
            tier.backlog_pkts -= 1
            tier.backlog_bytes -= size
            tier.sent_pkts += 1
            tier.sent_bytes += size
            self.backlog_pkts -= 1
            self.backlog_bytes -= size
            self.stats.delivered_pkts += 1
            self.stats.delivered_bytes += size
            if self.shaped:
                advance_clock(self.shaper.state, pkt.adj_len)
                advance_clock(tier.clock, pkt.adj_len)
            else:
                tier.deficit -= pkt.adj_len
            return pkt

    def unshaped_tier_schedule(self) -> Tier:
        """Weighted DRR over tiers (strict precedence in the strict 8-tier mode)."""
        tiers = self.tiers
        if self.strict:
            for tier in reversed(tiers):
                if tier.backlog_pkts:
                    return tier
        if len(tiers) == 1:
            return tiers[0]
        n = len(tiers)
        while True:
            tier = tiers[self._rr]
            if not tier.backlog_pkts:
                tier.deficit = 0
                self._rr = (self._rr + 1) % n
                continue
            if tier.deficit <= 0:
                tier.deficit += tier.weight
                self._rr = (self._rr + 1) % n
                continue
            return tier

    def _tier_dequeue(self, tier: Tier, now: SimTime) -> Optional[Packet]:
        new, old = tier.new_flows, tier.old_flows
        table = tier.table
        while True:
            if new:
                flow, lst = new[0], new
            elif old:
                flow, lst = old[0], old
            else:
                return None
            if flow.deficit <= 0:
                flow.deficit += table.get_quantum(flow)
                lst.popleft()
                old.append(flow)
                flow.membership = ListMembership.OLD
                continue
            pkt = codel_dequeue(flow, now, tier.drop)
            if pkt is None:
                lst.popleft()
                if lst is new:
                    old.append(flow)
                    flow.membership = ListMembership.OLD
                elif self.lazy_retire and _still_decaying(flow.aqm, now):
                    # AQM still settling: keep the flow (and its host counts)
                    # until it has decayed to rest
                    old.append(flow)
                else:
                    flow.membership = ListMembership.NONE
                    table.on_flow_deactivate(flow)
                continue
            flow.deficit -= pkt.adj_len
            return pkt

    # -- introspection ---------------------------------------------------

    def check_invariants(self) -> None:
        """Full-scan audit of refcounts, list membership and backlog counters."""
        total_pkts = total_bytes = 0
        for tier in self.tiers:
            tier.table.check_refcounts()
            listed = list(tier.new_flows) + list(tier.old_flows)
            if len({id(f) for f in listed}) != len(listed):
                raise AssertionError(f"tier {tier.index}: a flow appears twice in the DRR lists")
            active = {id(f) for f in tier.table.active_flows()}
            if active != {id(f) for f in listed}:
                raise AssertionError(f"tier {tier.index}: DRR lists differ from the active flows")
            pk = sum(len(f.queue) for f in listed)
            by = sum(f.bytes for f in listed)
            if sum(sum(p.total_len for p in f.queue) for f in listed) != by:
                raise AssertionError(f"tier {tier.index}: per-flow byte counters drifted")
            if pk != tier.backlog_pkts or by != tier.backlog_bytes:
                raise AssertionError(f"tier {tier.index}: backlog counters drifted")
            total_pkts += pk
            total_bytes += by
        if total_pkts != self.backlog_pkts or total_bytes != self.backlog_bytes:
            raise AssertionError("qdisc backlog counters drifted")

    def tier_bytes(self) -> list[int]:
        return [t.sent_bytes for t in self.tiers]


def flow_key_tuple(pkt: Packet) -> tuple:
    return (pkt.src_ip, pkt.dst_ip, pkt.src_port, pkt.dst_port, pkt.protocol)


class FifoQdisc:
    """Tail-drop FIFO bounded in bytes; the unmanaged-buffer baseline."""

    def __init__(self, limit_bytes: int = 4 * 1024 * 1024) -> None:
        if limit_bytes <= 0:
            raise ValueError("limit must be positive")
        self.limit = limit_bytes
        self.queue: deque[Packet] = deque()
        self.backlog_pkts = 0
        self.backlog_bytes = 0
        self.stats = QdiscStats()
        self.on_drop: Optional[Callable[[Packet, DropReason], None]] = None

    def enqueue(self, pkt: Packet, now: SimTime) -> EnqueueResult:
        pkt.adj_len = pkt.total_len - pkt.network_offset
        size = pkt.total_len
        self.stats.enqueued_pkts += 1
        self.stats.enqueued_bytes += size
        if self.backlog_bytes + size > self.limit:
            self.stats.dropped_pkts[DropReason.TAIL.value] += 1
            self.stats.dropped_bytes[DropReason.TAIL.value] += size
            if self.on_drop is not None:
                self.on_drop(pkt, DropReason.TAIL)
            return EnqueueResult.DROPPED
        pkt.enqueue_time = now
        self.queue.append(pkt)
        self.backlog_pkts += 1
        self.backlog_bytes += size
        return EnqueueResult.QUEUED

    def dequeue(self, now: SimTime) -> "Packet | Idle":
        if not self.queue:
            return Idle(None)
        pkt = self.queue.popleft()
        self.backlog_pkts -= 1
        self.backlog_bytes -= pkt.total_len
        self.stats.delivered_pkts += 1
        self.stats.delivered_bytes += pkt.total_len
        return pkt

    def check_invariants(self) -> None:
        if len(self.queue) != self.backlog_pkts or sum(p.total_len for p in self.queue) != self.backlog_bytes:
            raise AssertionError("fifo backlog counters drifted")

    def tier_bytes(self) -> list[int]:
        return [self.stats.delivered_bytes]
