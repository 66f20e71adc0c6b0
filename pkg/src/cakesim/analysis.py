"""Hash-collision probabilities for flow tables, and summary statistics of runs."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .netsim.metrics import MetricsLog

STEADY_TRIM_S = 5.0


def collision_prob_plain(m: int, n: int) -> float:
    """P(a new flow lands in one of ``n`` buckets already used by ``m`` random flows)."""
    if m < 0 or n < 1:
        raise ValueError("need m >= 0 and n >= 1")
    if m == 0:
        return 0.0
    if n == 1:
        return 1.0
    return -math.expm1(m * math.log1p(-1.0 / n))


def _log_binom_pmf(j: int, m: int, log_p: float, log_q: float) -> float:
    return math.lgamma(m + 1) - math.lgamma(j + 1) - math.lgamma(m - j + 1) + j * log_p + (m - j) * log_q


def collision_prob_setassoc(m: int, n: int, k: int) -> float:
    """P(the new flow's set already holds >= ``k`` of ``m`` flows spread over ``n/k`` sets).

    Evaluated in log space. The tail is summed directly when it is the small
    side of the distribution, otherwise as one minus the head.
    """
    if m < 0 or n < 1 or k < 1:
        raise ValueError("need m >= 0, n >= 1, k >= 1")
    if n % k:
        raise ValueError("queues must be divisible by ways")
    if m < k:
        return 0.0
    s = n // k
    if s == 1:
        return 1.0
    log_p = -math.log(s)
    log_q = math.log1p(-1.0 / s)
    if m / s < k:
        terms = [_log_binom_pmf(j, m, log_p, log_q) for j in range(k, m + 1)]
        top = max(terms)
        return min(1.0, math.exp(top) * math.fsum(math.exp(t - top) for t in terms))
    terms = [_log_binom_pmf(j, m, log_p, log_q) for j in range(0, k)]
    top = max(terms)
    head = math.exp(top) * math.fsum(math.exp(t - top) for t in terms)
    return max(0.0, 1.0 - head)


@dataclass(frozen=True)
class MonteCarloEstimate:
    p: float
    stderr: float
    trials: int


def monte_carlo_collision(m: int, n: int, k: int, trials: int = 1_000_000,
                          rng: Optional[np.random.Generator] = None) -> MonteCarloEstimate:
    """Sampled frequency of the new flow's set holding >= ``k`` of ``m`` uniform flows.

    Each of the ``m`` flows lands in the new flow's set independently with
    probability 1/s, so the set count is at least k exactly when the k-th
    success of that Bernoulli sequence happens at or before trial m. The
    k-th success time is a sum of k geometric waiting times, which keeps the
    sampling cost independent of m.
    """
    if n % k:
        raise ValueError("queues must be divisible by ways")
    rng = rng or np.random.default_rng(0)
    s = n // k
    if m < k:
        return MonteCarloEstimate(0.0, 0.0, trials)
    if s == 1:
        return MonteCarloEstimate(1.0, 0.0, trials)
    hits = 0
    chunk = 200_000
    done = 0
    while done < trials:
        c = min(chunk, trials - done)
        waits = rng.geometric(1.0 / s, size=(c, k)).sum(axis=1, dtype=np.int64)
        hits += int(np.count_nonzero(waits <= m))
        done += c
    p = hits / trials
    return MonteCarloEstimate(p, math.sqrt(max(p * (1 - p), 1e-300) / trials), trials)


def collision_curve(max_flows: int, n: int, k: int) -> list[tuple[int, float, float]]:
    """Rows (m, plain, set-associative) for m = 1..max_flows."""
    return [(m, collision_prob_plain(m, n), collision_prob_setassoc(m, n, k)) for m in range(1, max_flows + 1)]


# -- run summaries --------------------------------------------------------

@dataclass
class FlowSummary:
    flow_id: str
    kind: str
    direction: str
    dscp: int
    mean_goodput_bps: float
    median_goodput_bps: float
    latency_p50_ms: Optional[float]
    latency_p95_ms: Optional[float]
    latency_p99_ms: Optional[float]
    added_latency_p50_ms: Optional[float]
    drops: int
    filtered_acks: int


@dataclass
class SummaryStats:
    window_s: tuple[float, float]
    flows: dict[str, FlowSummary] = field(default_factory=dict)
    directions: dict[str, dict] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "window_s": list(self.window_s),
            "flows": {k: asdict(v) for k, v in self.flows.items()},
            "directions": self.directions,
        }


def _pct(values: list[float], q: float) -> Optional[float]:
    return float(np.percentile(values, q)) if values else None


def summarize(log: MetricsLog, trim_s: float = STEADY_TRIM_S) -> SummaryStats:
    """Steady-state statistics, ignoring ``trim_s`` seconds at each end of the run.

    Goodput is averaged over the metric bins inside the window; latency
    percentiles use every sample taken inside it. Per-direction entries add
    up the goodput of TCP and UDP flows in that direction.
    """
    start, end = trim_s, log.duration_s - trim_s
    if not log.flows:
        return SummaryStats((start, max(start, end)))
    if end <= start:
        raise ValueError(f"steady-state window of {trim_s}s at each end exceeds the {log.duration_s}s run")
    iv = log.interval_s
    lo, hi = int(round(start / iv)), int(round(end / iv))
    out = SummaryStats((start, end))
    for fid in sorted(log.flows):
        f = log.flows[fid]
        series = f["goodput_bps"][lo:hi]
        lat = [v for t, v in f["latency_ms"] if start <= t <= end]
        if not lat and f["kind"] == "tcp":
            lat = [v for v in f["rtt_ms"][lo:hi] if v is not None]
        base = f.get("base_latency_ms", 0.0)
        p50 = _pct(lat, 50)
        out.flows[fid] = FlowSummary(
            flow_id=fid,
            kind=f["kind"],
            direction=f["direction"],
            dscp=f["dscp"],
            mean_goodput_bps=float(sum(series) / len(series)) if series else 0.0,
            median_goodput_bps=float(np.median(series)) if series else 0.0,
            latency_p50_ms=p50,
            latency_p95_ms=_pct(lat, 95),
            latency_p99_ms=_pct(lat, 99),
            added_latency_p50_ms=None if p50 is None else p50 - base,
            drops=sum(f["drops"]),
            filtered_acks=sum(f["filtered_acks"]),
        )
    for d in ("up", "down"):
        members = [s for s in out.flows.values() if s.direction == d and s.kind in ("tcp", "udp")]
        if not members:
            continue
        out.directions[d] = {
            "flows": len(members),
            "goodput_bps": sum(s.mean_goodput_bps for s in members),
            "drops": sum(s.drops for s in members),
            "filtered_acks": sum(s.filtered_acks for s in members),
        }
    return out
