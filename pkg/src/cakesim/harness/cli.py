"""Command line entry point: ``cakesim run|presets|collision|summarize``."""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
import tempfile
import time
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

from .. import analysis
from ..netsim.metrics import MetricsLog
from ..netsim.network import Network, TopologyError
from .library import PRESETS, preset_text, resolve_scenario
from .qdiscspec import QdiscSpecError, parse_qdisc
from .scenario import ScenarioConfig, ScenarioError, serialise_scenario
from .units import parse_duration

log = logging.getLogger("cakesim")

SEED_ENV = "CAKESIM_SEED"
COLLISION_COLUMNS = ("flows", "plain", "set_associative")


def _atomic_write_all(files: dict[Path, str]) -> None:
    """Write every file or none: contents go to temporaries first, then are renamed."""
    staged: list[tuple[str, Path]] = []
    try:
        for path, text in files.items():
            path.parent.mkdir(parents=True, exist_ok=True)
            fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
            staged.append((tmp, path))
            with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
        for tmp, path in staged:
            os.replace(tmp, path)
    finally:
        for tmp, _ in staged:
            if os.path.exists(tmp):
                os.unlink(tmp)


def _seed(arg: Optional[int], scenario: ScenarioConfig) -> int:
    if arg is not None:
        return arg
    env = os.environ.get(SEED_ENV)
    if env:
        try:
            return int(env)
        except ValueError:
            raise ValueError(f"{SEED_ENV} must be an integer, got {env!r}") from None
    return scenario.seed


def apply_overrides(scenario: ScenarioConfig, args: argparse.Namespace) -> ScenarioConfig:
    for direction, text in (("up", args.qdisc or args.up_qdisc), ("down", args.qdisc or args.down_qdisc)):
        if text:
            scenario = scenario.with_qdisc(direction, parse_qdisc(text))
    if args.nat is not None:
        scenario = replace(scenario, nat=args.nat == "on")
    opts = {}
    if args.ack_filter:
        opts["ack_filter"] = args.ack_filter
    if args.diffserv:
        opts["diffserv"] = args.diffserv
    if args.isolation:
        opts["isolation"] = args.isolation
    if args.nat is not None:
        opts["nat"] = args.nat == "on"
    if opts:
        for direction in ("up", "down"):
            spec = scenario.links[direction].qdisc
            if spec.cake is not None:
                scenario = scenario.with_qdisc(direction, spec.override(**opts))
    if args.duration:
        scenario = replace(scenario, duration=parse_duration(args.duration))
    return scenario


def cmd_run(args: argparse.Namespace) -> int:
    scenario = apply_overrides(resolve_scenario(args.scenario), args)
    seed = _seed(args.seed, scenario)
    scenario = replace(scenario, seed=seed)
    t0 = time.perf_counter()
    net = Network(scenario, audit=args.audit)
    mlog = net.run()
    elapsed = time.perf_counter() - t0
    summary = analysis.summarize(mlog, trim_s=min(analysis.STEADY_TRIM_S, mlog.duration_s / 4))
    out = Path(args.out)
    _atomic_write_all({
        out / "metrics.json": mlog.to_json(summary.to_dict()) + "\n",
        out / "flows.csv": mlog.to_csv(),
    })
    for d, agg in summary.directions.items():
        print(f"{d:>4}: {agg['goodput_bps'] / 1e6:8.3f} Mbit/s over {agg['flows']} flows, "
              f"drops {agg['drops']}, filtered acks {agg['filtered_acks']}")
    print(f"wrote {out / 'metrics.json'} and {out / 'flows.csv'} "
          f"({mlog.events} events, seed {seed}, {elapsed:.1f}s)")
    return 0


def cmd_presets(args: argparse.Namespace) -> int:
    if args.show:
        sys.stdout.write(preset_text(args.show))
        return 0
    for name in PRESETS:
        text = preset_text(name)
        desc = " ".join(line[1:].strip() for line in text.splitlines() if line.startswith("#"))
        print(f"{name:<16} {desc}")
    return 0


def cmd_collision(args: argparse.Namespace) -> int:
    if args.max_flows < 1:
        raise ValueError("--max-flows must be at least 1")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COLLISION_COLUMNS)
    for m, plain, sa in analysis.collision_curve(args.max_flows, args.queues, args.ways):
        w.writerow((m, repr(plain), repr(sa)))
    if args.out:
        _atomic_write_all({Path(args.out): buf.getvalue()})
    else:
        sys.stdout.write(buf.getvalue())
    return 0


def cmd_summarize(args: argparse.Namespace) -> int:
    mlog = MetricsLog.from_json(Path(args.log).read_text(encoding="utf-8"))
    stats = analysis.summarize(mlog, trim_s=args.trim)
    if args.json:
        print(json.dumps(stats.to_dict(), indent=1, sort_keys=True))
        return 0
    print(f"window {stats.window_s[0]:.1f}s .. {stats.window_s[1]:.1f}s")
    print(f"{'flow':<20} {'dir':<4} {'mean Mbit/s':>11} {'p50 ms':>8} {'p95 ms':>8} {'p99 ms':>8} "
          f"{'drops':>6} {'filtered':>8}")

    def ms(v):
        return f"{v:8.2f}" if v is not None else f"{'-':>8}"

    for s in stats.flows.values():
        print(f"{s.flow_id:<20} {s.direction:<4} {s.mean_goodput_bps / 1e6:11.3f} {ms(s.latency_p50_ms)} "
              f"{ms(s.latency_p95_ms)} {ms(s.latency_p99_ms)} {s.drops:6d} {s.filtered_acks:8d}")
    for d, agg in stats.directions.items():
        print(f"total {d}: {agg['goodput_bps'] / 1e6:.3f} Mbit/s")
    return 0


def cmd_check(args: argparse.Namespace) -> int:
    scenario = resolve_scenario(args.scenario)
    sys.stdout.write(serialise_scenario(scenario))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cakesim", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="simulate a scenario and write metrics.json and flows.csv")
    r.add_argument("scenario", help="scenario file or preset name (e.g. presets/rrul)")
    r.add_argument("--seed", type=int, help=f"random seed (default: ${SEED_ENV}, then the scenario's)")
    r.add_argument("--duration", help="override run length, e.g. 30s")
    r.add_argument("--out", default=".", help="output directory")
    r.add_argument("--qdisc", help="qdisc for both directions, e.g. 'fq_codel' or 'cake bandwidth 10Mbit'")
    r.add_argument("--up-qdisc", help="qdisc for the lan-to-wan link")
    r.add_argument("--down-qdisc", help="qdisc for the wan-to-lan link")
    r.add_argument("--ack-filter", choices=("off", "on", "conservative", "aggressive"))
    r.add_argument("--diffserv", choices=("besteffort", "diffserv3", "diffserv4", "diffserv8", "diffserv8-strict"))
    r.add_argument("--isolation", choices=("flowblind", "hosts", "flows", "srchost", "dsthost", "triple-isolate"))
    r.add_argument("--nat", choices=("on", "off"), help="toggle NAT and NAT-aware hashing")
    r.add_argument("--audit", action="store_true", help="check qdisc invariants after every operation")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("presets", help="list built-in scenarios")
    s.add_argument("--show", metavar="NAME", help="print one preset's scenario file")
    s.set_defaults(func=cmd_presets)

    c = sub.add_parser("collision", help="hash collision probability curve as CSV")
    c.add_argument("--queues", type=int, default=1024)
    c.add_argument("--ways", type=int, default=8)
    c.add_argument("--max-flows", type=int, default=5000)
    c.add_argument("--out", help="CSV file (default: stdout)")
    c.set_defaults(func=cmd_collision)

    m = sub.add_parser("summarize", help="steady-state statistics of a metrics.json")
    m.add_argument("log")
    m.add_argument("--trim", type=float, default=analysis.STEADY_TRIM_S, help="seconds ignored at each end")
    m.add_argument("--json", action="store_true")
    m.set_defaults(func=cmd_summarize)

    k = sub.add_parser("check", help="validate a scenario and print its canonical form")
    k.add_argument("scenario")
    k.set_defaults(func=cmd_check)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ScenarioError as e:
        print(f"cakesim: invalid scenario:\n{e}", file=sys.stderr)
    except (QdiscSpecError, TopologyError, ValueError, KeyError, FileNotFoundError, OSError) as e:
        msg = e.args[0] if isinstance(e, KeyError) and e.args else e
        print(f"cakesim: {msg}", file=sys.stderr)
    return 2
