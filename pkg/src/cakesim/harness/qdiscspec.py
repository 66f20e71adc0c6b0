"""Queueing discipline descriptions as tc-style keyword strings.

    cake bandwidth 10Mbit diffserv3 triple-isolate nat ack-filter overhead 18 mpu 64
    fq_codel quantum 1514 target 5ms interval 100ms
    fifo limit 1MB
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

from ..ackfilter import AckFilterMode
from ..codel import CodelParams
from ..flowtable import FlowTableConfig, IsolationMode, NatTable
from ..pktmodel import DiffServMode
from ..scheduler import CakeConfig, CakeQdisc, FifoQdisc
from ..shaper import OVERHEAD_PRESETS, Framing, ShaperConfig, SplitGso
from .units import format_duration, format_rate, format_size, parse_duration, parse_rate, parse_size

KINDS = ("cake", "fq_codel", "fifo")
DEFAULT_FIFO_LIMIT = 4 * 1024 * 1024

_DIFFSERV = {m.value: m for m in DiffServMode}
_ISOLATION = {m.value: m for m in IsolationMode}
_FRAMING = {m.value: m for m in Framing}
_ACK = {"no-ack-filter": AckFilterMode.OFF, "ack-filter": AckFilterMode.CONSERVATIVE,
        "ack-filter-aggressive": AckFilterMode.AGGRESSIVE}
_ACK_NAMES = {v: k for k, v in _ACK.items()}


class QdiscSpecError(ValueError):
    pass


@dataclass(frozen=True)
class QdiscSpec:
    kind: str
    cake: Optional[CakeConfig] = None
    limit: int = DEFAULT_FIFO_LIMIT

    def build(self, salt: int = 0, nat_table: Optional[NatTable] = None):
        if self.kind == "fifo":
            return FifoQdisc(self.limit)
        return CakeQdisc(self.cake, salt=salt, nat_table=nat_table)

    @property
    def rate(self) -> int:
        return self.cake.shaper.rate if self.cake is not None else 0

    def override(self, **options) -> "QdiscSpec":
        """Apply CLI-style overrides (diffserv, isolation, ack_filter, nat, bandwidth)."""
        if self.cake is None:
            raise QdiscSpecError(f"{self.kind} has no options {sorted(options)}")
        cfg = self.cake
        flows = cfg.flows
        if "diffserv" in options:
            cfg = replace(cfg, diffserv=_lookup(_DIFFSERV, options["diffserv"], "diffserv mode"),
                          dscp_table=None)
        if "isolation" in options:
            flows = replace(flows, isolation_mode=_lookup(_ISOLATION, options["isolation"], "isolation mode"))
        if "nat" in options:
            flows = replace(flows, nat_aware=bool(options["nat"]))
        if "ack_filter" in options:
            mode = options["ack_filter"]
            mode = {"off": "no-ack-filter", "on": "ack-filter", "conservative": "ack-filter",
                    "aggressive": "ack-filter-aggressive"}.get(mode, mode)
            cfg = replace(cfg, ack_filter=_lookup(_ACK, mode, "ack filter mode"))
        if "bandwidth" in options:
            cfg = replace(cfg, shaper=replace(cfg.shaper, rate=options["bandwidth"]))
        return replace(self, cake=replace(cfg, flows=flows))


def _lookup(table: dict, key: str, what: str):
    try:
        return table[key]
    except KeyError:
        raise QdiscSpecError(f"unknown {what} {key!r} (choose from {', '.join(table)})") from None


def _take(words: list[str], i: int, keyword: str) -> str:
    if i + 1 >= len(words):
        raise QdiscSpecError(f"keyword {keyword!r} needs a value")
    return words[i + 1]


def _int(text: str, keyword: str) -> int:
    try:
        return int(text)
    except ValueError:
        raise QdiscSpecError(f"{keyword} expects an integer, got {text!r}") from None


def _value(parse, text: str, keyword: str) -> int:
    try:
        return parse(text)
    except ValueError as e:
        raise QdiscSpecError(f"{keyword}: {e}") from None


def parse_qdisc(text: str) -> QdiscSpec:
    words = text.split()
    if not words:
        raise QdiscSpecError("empty qdisc description")
    kind = words[0]
    if kind not in KINDS:
        raise QdiscSpecError(f"unknown qdisc {kind!r} (choose from {', '.join(KINDS)})")
    if kind == "fifo":
        limit = DEFAULT_FIFO_LIMIT
        i = 1
        while i < len(words):
            if words[i] != "limit":
                raise QdiscSpecError(f"unknown fifo keyword {words[i]!r}")
            limit = _value(parse_size, _take(words, i, "limit"), "limit")
            i += 2
        if limit <= 0:
            raise QdiscSpecError("fifo limit must be positive")
        return QdiscSpec("fifo", limit=limit)

    shaper: dict = {}
    flows: dict = {}
    codel: dict = {}
    cake: dict = {}
    i = 1
    while i < len(words):
        w = words[i]
        step = 1
        if kind == "cake" and w in _DIFFSERV:
            cake["diffserv"] = _DIFFSERV[w]
        elif kind == "cake" and w in _ISOLATION:
            flows["isolation_mode"] = _ISOLATION[w]
        elif kind == "cake" and w in _ACK:
            cake["ack_filter"] = _ACK[w]
        elif kind == "cake" and w in ("nat", "nonat"):
            flows["nat_aware"] = w == "nat"
        elif kind == "cake" and w in _FRAMING:
            shaper["framing"] = _FRAMING[w]
        elif kind == "cake" and w in OVERHEAD_PRESETS:
            shaper.update(OVERHEAD_PRESETS[w])
        elif kind == "cake" and w in ("split-gso", "no-split-gso"):
            shaper["split_gso"] = SplitGso.ON if w == "split-gso" else SplitGso.OFF
        elif kind == "cake" and w == "unlimited":
            shaper["rate"] = 0
        elif kind == "cake" and w == "bandwidth":
            shaper["rate"] = _value(parse_rate, _take(words, i, w), w)
            step = 2
        elif kind == "cake" and w in ("overhead", "mpu"):
            shaper[w] = _int(_take(words, i, w), w)
            step = 2
        elif kind == "cake" and w in ("queues", "ways"):
            flows["total_queues" if w == "queues" else "ways"] = _int(_take(words, i, w), w)
            step = 2
        elif kind == "fq_codel" and w == "flows":
            flows["total_queues"] = _int(_take(words, i, w), w)
            step = 2
        elif w == "quantum":
            flows["quantum"] = _int(_take(words, i, w), w)
            step = 2
        elif w in ("target", "interval"):
            codel[w] = _value(parse_duration, _take(words, i, w), w)
            step = 2
        elif w == "rtt":
            rtt = _value(parse_duration, _take(words, i, w), w)
            codel["interval"] = rtt
            codel["target"] = max(1, rtt // 20)
            step = 2
        elif w == "memlimit":
            cake["memlimit"] = _value(parse_size, _take(words, i, w), w)
            step = 2
        else:
            raise QdiscSpecError(f"unknown {kind} keyword {w!r}")
        i += step
    try:
        codel_params = CodelParams(**codel)
        if kind == "fq_codel":
            cfg = CakeConfig.fq_codel(quantum=flows.get("quantum", 1514), codel=codel_params,
                                      memlimit=cake.get("memlimit"))
            if "total_queues" in flows:
                cfg = replace(cfg, flows=replace(cfg.flows, total_queues=flows["total_queues"]))
        else:
            cfg = CakeConfig(shaper=ShaperConfig(**shaper), flows=FlowTableConfig(**flows),
                             codel=codel_params, **cake)
    except ValueError as e:
        raise QdiscSpecError(str(e)) from None
    return QdiscSpec(kind, cake=cfg)


def format_qdisc(spec: QdiscSpec) -> str:
    """Canonical keyword string; ``parse_qdisc`` of the result equals ``spec``."""
    if spec.kind == "fifo":
        return f"fifo limit {format_size(spec.limit)}"
    cfg = spec.cake
    c = cfg.codel
    tail = f"target {format_duration(c.target)} interval {format_duration(c.interval)}"
    if cfg.memlimit is not None:
        tail += f" memlimit {format_size(cfg.memlimit)}"
    if spec.kind == "fq_codel":
        return f"fq_codel quantum {cfg.flows.quantum} flows {cfg.flows.total_queues} {tail}"
    s = cfg.shaper
    f = cfg.flows
    words = [
        "cake",
        f"bandwidth {format_rate(s.rate)}" if s.rate else "unlimited",
        cfg.diffserv.value,
        f.isolation_mode.value,
        "nat" if f.nat_aware else "nonat",
        _ACK_NAMES[cfg.ack_filter],
        f"overhead {s.overhead} mpu {s.mpu}",
        s.framing.value,
    ]
    if s.split_gso is not SplitGso.AUTO:
        words.append("split-gso" if s.split_gso is SplitGso.ON else "no-split-gso")
    words.append(f"quantum {f.quantum} queues {f.total_queues} ways {f.ways}")
    words.append(tail)
    return " ".join(words)
