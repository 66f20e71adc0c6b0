"""Scenario files: a flat, sectioned key/value text format.

    # comments start with '#'
    [scenario]
    duration = 60s
    interval = 200ms
    seed = 1

    [link up]              # lan -> wan
    rate = 10Mbit
    delay = 25ms
    qdisc = cake bandwidth 10Mbit

    [link down]            # wan -> lan
    ...

    [host client]
    side = lan
    addr = 10.0.0.2

    [flow bulk]
    type = tcp             # tcp | udp | ping
    src = client
    dst = server
    count = 4

Parsing collects every problem before failing, each tagged with its line.
"""

from __future__ import annotations

import ipaddress
from dataclasses import dataclass, field, fields, replace
from typing import Callable, Optional

from ..pktmodel import dscp_name, parse_dscp
from .qdiscspec import QdiscSpec, QdiscSpecError, format_qdisc, parse_qdisc
from .units import format_duration, format_rate, parse_duration, parse_rate

FLOW_TYPES = ("tcp", "udp", "ping")
SIDES = ("lan", "wan")
DIRECTIONS = ("up", "down")


@dataclass(frozen=True)
class LinkConfig:
    rate: int
    delay: int
    qdisc: QdiscSpec
    overhead: int = 0


@dataclass(frozen=True)
class HostConfig:
    name: str
    side: str
    addr: str


@dataclass(frozen=True)
class EndpointConfig:
    name: str
    type: str
    src: str
    dst: str
    start: int = 0
    stop: Optional[int] = None
    dscp: int = 0
    count: int = 1
    mss: int = 1448
    gso: int = 1
    delayed_ack: bool = True
    rate: Optional[int] = None
    size: Optional[int] = None
    interval: Optional[int] = None
    proto: str = "icmp"
    beta: float = 0.7

    def instance_ids(self) -> list[str]:
        if self.count == 1:
            return [self.name]
        return [f"{self.name}.{i}" for i in range(1, self.count + 1)]


@dataclass(frozen=True)
class ScenarioConfig:
    links: dict = field(default_factory=dict)
    hosts: tuple[HostConfig, ...] = ()
    endpoints: tuple[EndpointConfig, ...] = ()
    name: str = "scenario"
    duration: int = 60 * 10**9
    interval: int = 200 * 10**6
    seed: int = 1
    nat: bool = False
    public_addr: str = "192.0.2.1"
    jitter: int = 0

    def host(self, name: str) -> HostConfig:
        for h in self.hosts:
            if h.name == name:
                return h
        raise KeyError(name)

    def direction(self, ep: EndpointConfig) -> str:
        return "up" if self.host(ep.src).side == "lan" else "down"

    def with_qdisc(self, direction: str, spec: QdiscSpec) -> "ScenarioConfig":
        links = dict(self.links)
        links[direction] = replace(links[direction], qdisc=spec)
        return replace(self, links=links)


class ScenarioError(ValueError):
    """All problems found in a scenario, each as (line, field, message)."""

    def __init__(self, problems: list[tuple[Optional[int], str, str]]) -> None:
        self.problems = problems
        super().__init__("\n".join(
            f"line {ln}: {fld}: {msg}" if ln is not None else f"{fld}: {msg}"
            for ln, fld, msg in problems
        ))


def _bool(text: str) -> bool:
    t = text.lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _choice(options: tuple[str, ...]) -> Callable[[str], str]:
    def parse(text: str) -> str:
        if text not in options:
            raise ValueError(f"expected one of {', '.join(options)}, got {text!r}")
        return text
    return parse


def _positive_int(text: str) -> int:
    v = int(text)
    if v <= 0:
        raise ValueError(f"expected a positive integer, got {text!r}")
    return v


def _fraction(text: str) -> float:
    v = float(text)
    if not 0 < v < 1:
        raise ValueError(f"expected a value strictly between 0 and 1, got {text!r}")
    return v


def _addr(text: str) -> str:
    return str(ipaddress.IPv4Address(text))


SCENARIO_KEYS: dict[str, Callable] = {
    "name": str, "duration": parse_duration, "interval": parse_duration, "seed": int,
    "nat": _bool, "public_addr": _addr, "jitter": parse_duration,
}
LINK_KEYS: dict[str, Callable] = {
    "rate": parse_rate, "delay": parse_duration, "qdisc": parse_qdisc, "overhead": int,
}
HOST_KEYS: dict[str, Callable] = {"side": _choice(SIDES), "addr": _addr}
ENDPOINT_KEYS: dict[str, Callable] = {
    "type": _choice(FLOW_TYPES), "src": str, "dst": str, "start": parse_duration,
    "stop": parse_duration, "dscp": parse_dscp, "count": _positive_int, "mss": _positive_int,
    "gso": _positive_int, "delayed_ack": _bool, "rate": parse_rate, "size": _positive_int,
    "interval": parse_duration, "proto": _choice(("icmp", "udp")), "beta": _fraction,
}
_SECTION_KEYS = {"scenario": SCENARIO_KEYS, "link": LINK_KEYS, "host": HOST_KEYS, "flow": ENDPOINT_KEYS}


class _Section:
    def __init__(self, kind: str, name: Optional[str], line: int) -> None:
        self.kind = kind
        self.name = name
        self.line = line
        self.values: dict = {}
        self.lines: dict[str, int] = {}


def parse_scenario(text: str) -> ScenarioConfig:
    problems: list[tuple[Optional[int], str, str]] = []
    sections: list[_Section] = []
    current: Optional[_Section] = None
    for ln, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                problems.append((ln, "section", f"malformed header {raw.strip()!r}"))
                current = None
                continue
            parts = line[1:-1].split()
            kind = parts[0] if parts else ""
            name = parts[1] if len(parts) > 1 else None
            if kind not in _SECTION_KEYS or len(parts) > 2:
                problems.append((ln, "section", f"unknown section {line!r}"))
                current = None
                continue
            if kind == "scenario" and name is not None:
                problems.append((ln, "section", "[scenario] takes no name"))
            if kind != "scenario" and name is None:
                problems.append((ln, "section", f"[{kind}] needs a name"))
                current = None
                continue
            current = _Section(kind, name, ln)
            sections.append(current)
            continue
        if "=" not in line:
            problems.append((ln, "syntax", f"expected 'key = value', got {raw.strip()!r}"))
            continue
        key, value = (s.strip() for s in line.split("=", 1))
        if current is None:
            problems.append((ln, key, "key outside of a section"))
            continue
        where = f"{current.kind}{' ' + current.name if current.name else ''}.{key}"
        parsers = _SECTION_KEYS[current.kind]
        if key not in parsers:
            problems.append((ln, where, f"unknown key (expected one of {', '.join(parsers)})"))
            continue
        if key in current.values:
            problems.append((ln, where, f"duplicate key (first on line {current.lines[key]})"))
            continue
        try:
            current.values[key] = parsers[key](value)
        except (ValueError, QdiscSpecError) as e:
            problems.append((ln, where, str(e)))
            continue
        current.lines[key] = ln

    scen: dict = {}
    links: dict[str, LinkConfig] = {}
    hosts: list[HostConfig] = []
    endpoints: list[EndpointConfig] = []
    seen: dict[tuple[str, str], int] = {}
    for sec in sections:
        if sec.name is not None:
            ident = ("host" if sec.kind == "host" else sec.kind, sec.name)
            if ident in seen:
                problems.append((sec.line, f"{sec.kind} {sec.name}",
                                 f"duplicate name (first on line {seen[ident]})"))
                continue
            seen[ident] = sec.line
        v = sec.values
        if sec.kind == "scenario":
            if scen:
                problems.append((sec.line, "scenario", "more than one [scenario] section"))
            scen.update(v)
        elif sec.kind == "link":
            if sec.name not in DIRECTIONS:
                problems.append((sec.line, f"link {sec.name}", "link name must be 'up' or 'down'"))
                continue
            missing = [k for k in ("rate", "delay", "qdisc") if k not in v]
            if missing:
                problems.append((sec.line, f"link {sec.name}", f"missing {', '.join(missing)}"))
                continue
            if v["rate"] <= 0:
                problems.append((sec.lines["rate"], f"link {sec.name}.rate", "must be positive"))
                continue
            links[sec.name] = LinkConfig(**v)
        elif sec.kind == "host":
            missing = [k for k in ("side", "addr") if k not in v]
            if missing:
                problems.append((sec.line, f"host {sec.name}", f"missing {', '.join(missing)}"))
                continue
            hosts.append(HostConfig(sec.name, v["side"], v["addr"]))
        else:
            missing = [k for k in ("type", "src", "dst") if k not in v]
            if missing:
                problems.append((sec.line, f"flow {sec.name}", f"missing {', '.join(missing)}"))
                continue
            ep = EndpointConfig(name=sec.name, **v)
            if ep.type == "udp" and (ep.rate is None or ep.size is None):
                problems.append((sec.line, f"flow {sec.name}", "udp flows need rate and size"))
                continue
            if ep.type == "ping" and ep.interval is None:
                problems.append((sec.line, f"flow {sec.name}", "ping flows need an interval"))
                continue
            endpoints.append(ep)
            sec.ep = ep

    for d in DIRECTIONS:
        if d not in links:
            problems.append((None, f"link {d}", "not defined"))
    names = {h.name: h for h in hosts}
    addrs: dict[str, str] = {}
    for h in hosts:
        if h.addr in addrs:
            problems.append((None, f"host {h.name}.addr", f"address {h.addr} already used by {addrs[h.addr]}"))
        addrs[h.addr] = h.name
    for sec in sections:
        ep = getattr(sec, "ep", None)
        if ep is None:
            continue
        for role in ("src", "dst"):
            ref = getattr(ep, role)
            if ref not in names:
                problems.append((sec.lines[role], f"flow {ep.name}.{role}", f"undefined host {ref!r}"))
        if ep.src in names and ep.dst in names and names[ep.src].side == names[ep.dst].side:
            problems.append((sec.line, f"flow {ep.name}",
                             f"src and dst are both on the {names[ep.src].side} side"))
        if ep.stop is not None and ep.stop <= ep.start:
            problems.append((sec.lines["stop"], f"flow {ep.name}.stop", "must be after start"))
    for key in ("duration", "interval"):
        if key in scen and scen[key] <= 0:
            problems.append((None, f"scenario.{key}", "must be positive"))
    if problems:
        raise ScenarioError(problems)
    return ScenarioConfig(links=links, hosts=tuple(hosts), endpoints=tuple(endpoints), **scen)


def serialise_scenario(cfg: ScenarioConfig) -> str:
    """Canonical text form; ``parse_scenario`` of the result equals ``cfg``."""
    out = [
        "[scenario]",
        f"name = {cfg.name}",
        f"duration = {format_duration(cfg.duration)}",
        f"interval = {format_duration(cfg.interval)}",
        f"seed = {cfg.seed}",
        f"nat = {'on' if cfg.nat else 'off'}",
        f"public_addr = {cfg.public_addr}",
        f"jitter = {format_duration(cfg.jitter)}",
    ]
    for d in DIRECTIONS:
        if d not in cfg.links:
            continue
        link = cfg.links[d]
        out += ["", f"[link {d}]", f"rate = {format_rate(link.rate)}",
                f"delay = {format_duration(link.delay)}", f"qdisc = {format_qdisc(link.qdisc)}"]
        if link.overhead:
            out.append(f"overhead = {link.overhead}")
    for h in cfg.hosts:
        out += ["", f"[host {h.name}]", f"side = {h.side}", f"addr = {h.addr}"]
    defaults = EndpointConfig("", "", "", "")
    for ep in cfg.endpoints:
        out += ["", f"[flow {ep.name}]", f"type = {ep.type}", f"src = {ep.src}", f"dst = {ep.dst}"]
        for f in fields(EndpointConfig):
            if f.name in ("name", "type", "src", "dst"):
                continue
            v = getattr(ep, f.name)
            if v == getattr(defaults, f.name):
                continue
            if f.name in ("start", "stop", "interval"):
                v = format_duration(v)
            elif f.name == "rate":
                v = format_rate(v)
            elif f.name == "dscp":
                v = dscp_name(v)
            elif f.name == "delayed_ack":
                v = "on" if v else "off"
            out.append(f"{f.name} = {v}")
    return "\n".join(out) + "\n"
