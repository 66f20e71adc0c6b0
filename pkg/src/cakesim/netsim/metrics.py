"""Per-flow time series collected during a run, and their persisted form."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Optional

from ..pktmodel import NS_PER_MS, NS_PER_S, SimTime

SCHEMA = "cakesim.metrics/1"
CSV_COLUMNS = ("time_s", "flow_id", "direction", "goodput_bps", "rtt_ms", "drops", "filtered_acks")


@dataclass
class FlowRecord:
    flow_id: str
    kind: str
    direction: str
    src: str
    dst: str
    dscp: int
    base_latency_ns: SimTime = 0
    goodput_bytes: list[int] = field(default_factory=list)
    rtt_sum_ns: list[int] = field(default_factory=list)
    rtt_count: list[int] = field(default_factory=list)
    drops: list[int] = field(default_factory=list)
    filtered: list[int] = field(default_factory=list)
    latency: list[tuple[SimTime, SimTime]] = field(default_factory=list)
    sent_pkts: int = 0
    drop_reasons: dict = field(default_factory=dict)


class Recorder:
    """Bins per-flow events into fixed metric intervals."""

    def __init__(self, interval: SimTime, duration: SimTime) -> None:
        self.interval = interval
        self.duration = duration
        self.bins = -(-duration // interval)
        self.flows: dict[str, FlowRecord] = {}

    def add_flow(self, rec: FlowRecord) -> FlowRecord:
        n = self.bins
        rec.goodput_bytes = [0] * n
        rec.rtt_sum_ns = [0] * n
        rec.rtt_count = [0] * n
        rec.drops = [0] * n
        rec.filtered = [0] * n
        self.flows[rec.flow_id] = rec
        return rec

    def _bin(self, t: SimTime) -> int:
        return min(t // self.interval, self.bins - 1)

    def goodput(self, flow_id: str, t: SimTime, nbytes: int) -> None:
        self.flows[flow_id].goodput_bytes[self._bin(t)] += nbytes

    def rtt(self, flow_id: str, t: SimTime, value: SimTime) -> None:
        rec = self.flows[flow_id]
        b = self._bin(t)
        rec.rtt_sum_ns[b] += value
        rec.rtt_count[b] += 1

    def latency_sample(self, flow_id: str, t: SimTime, value: SimTime) -> None:
        rec = self.flows[flow_id]
        rec.latency.append((t, value))
        b = self._bin(t)
        rec.rtt_sum_ns[b] += value
        rec.rtt_count[b] += 1

    def drop(self, flow_id: Optional[str], t: SimTime, reason: str) -> None:
        rec = self.flows.get(flow_id)
        if rec is None:
            return
        b = self._bin(t)
        if reason == "ack_filter":
            rec.filtered[b] += 1
        else:
            rec.drops[b] += 1
        rec.drop_reasons[reason] = rec.drop_reasons.get(reason, 0) + 1


@dataclass
class MetricsLog:
    seed: int
    duration_ns: SimTime
    interval_ns: SimTime
    scenario: str
    flows: dict[str, dict]
    links: dict[str, dict]
    events: int = 0
    schema: str = SCHEMA

    @classmethod
    def from_recorder(cls, rec: Recorder, seed: int, scenario: str, links: dict, events: int) -> "MetricsLog":
        flows = {}
        iv = rec.interval
        for fid, f in rec.flows.items():
            flows[fid] = {
                "kind": f.kind,
                "direction": f.direction,
                "src": f.src,
                "dst": f.dst,
                "dscp": f.dscp,
                "base_latency_ms": f.base_latency_ns / NS_PER_MS,
                "goodput_bps": [b * 8 * NS_PER_S / iv for b in f.goodput_bytes],
                "rtt_ms": [
                    (s / c / NS_PER_MS) if c else None for s, c in zip(f.rtt_sum_ns, f.rtt_count)
                ],
                "drops": list(f.drops),
                "filtered_acks": list(f.filtered),
                "latency_ms": [[t / NS_PER_S, v / NS_PER_MS] for t, v in f.latency],
                "totals": {
                    "goodput_bytes": sum(f.goodput_bytes),
                    "sent_pkts": f.sent_pkts,
                    "drops": sum(f.drops),
                    "filtered_acks": sum(f.filtered),
                    "drop_reasons": dict(sorted(f.drop_reasons.items())),
                },
            }
        return cls(seed, rec.duration, iv, scenario, flows, links, events)

    @property
    def duration_s(self) -> float:
        return self.duration_ns / NS_PER_S

    @property
    def interval_s(self) -> float:
        return self.interval_ns / NS_PER_S

    def to_dict(self, summary: Optional[dict] = None) -> dict:
        d = {
            "schema": self.schema,
            "seed": self.seed,
            "duration_s": self.duration_s,
            "interval_s": self.interval_s,
            "events": self.events,
            "scenario": self.scenario,
            "links": self.links,
            "flows": self.flows,
        }
        if summary is not None:
            d["summary"] = summary
        return d

    def to_json(self, summary: Optional[dict] = None) -> str:
        return json.dumps(self.to_dict(summary), indent=1, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsLog":
        if not str(d.get("schema", "")).startswith("cakesim.metrics/"):
            raise ValueError("not a cakesim metrics document")
        return cls(
            seed=d["seed"],
            duration_ns=round(d["duration_s"] * NS_PER_S),
            interval_ns=round(d["interval_s"] * NS_PER_S),
            scenario=d["scenario"],
            flows=d["flows"],
            links=d["links"],
            events=d.get("events", 0),
            schema=d["schema"],
        )

    @classmethod
    def from_json(cls, text: str) -> "MetricsLog":
        return cls.from_dict(json.loads(text))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        iv = self.interval_s
        for fid in sorted(self.flows):
            f = self.flows[fid]
            for i, g in enumerate(f["goodput_bps"]):
                rtt = f["rtt_ms"][i]
                w.writerow((
                    f"{(i + 1) * iv:.6f}", fid, f["direction"], f"{g:.1f}",
                    "" if rtt is None else f"{rtt:.3f}", f["drops"][i], f["filtered_acks"][i],
                ))
        return buf.getvalue()

    def goodput_mean(self, flow_id: str, start_s: float = 0.0, end_s: Optional[float] = None) -> float:
        """Mean goodput in bit/s over the bins lying fully inside [start_s, end_s]."""
        series = self.flows[flow_id]["goodput_bps"]
        iv = self.interval_s
        end_s = self.duration_s if end_s is None else end_s
        lo = int(round(start_s / iv))
        hi = int(round(end_s / iv))
        vals = series[lo:hi]
        return sum(vals) / len(vals) if vals else 0.0
