"""Human-readable rates, durations and sizes, parsed to integers and back.

Rates are bit/s, durations nanoseconds, sizes bytes. Formatting picks the
largest unit that represents the value exactly, so parse(format(x)) == x.
"""

from __future__ import annotations

import re
from fractions import Fraction

_NUM = re.compile(r"^\s*([0-9]*\.?[0-9]+(?:[eE][-+]?[0-9]+)?)\s*([A-Za-z/]*)\s*$")

RATE_UNITS = {
    "": 1, "bit": 1, "bps": 1,
    "kbit": 10**3, "kbps": 10**3,
    "mbit": 10**6, "mbps": 10**6,
    "gbit": 10**9, "gbps": 10**9,
}
DURATION_UNITS = {"ns": 1, "us": 10**3, "ms": 10**6, "s": 10**9, "": 10**9}
SIZE_UNITS = {"": 1, "b": 1, "kb": 1024, "k": 1024, "mb": 1024**2, "m": 1024**2, "gb": 1024**3}


def _parse(text: str, units: dict[str, int], what: str) -> int:
    m = _NUM.match(str(text))
    if not m:
        raise ValueError(f"invalid {what}: {text!r}")
    number, unit = m.groups()
    scale = units.get(unit.lower())
    if scale is None:
        raise ValueError(f"unknown {what} unit {unit!r} in {text!r}")
    value = Fraction(number) * scale
    if value.denominator != 1:
        raise ValueError(f"{what} {text!r} is not a whole number of base units")
    return int(value)


def parse_rate(text: str) -> int:
    return _parse(text, RATE_UNITS, "rate")


def parse_duration(text: str) -> int:
    return _parse(text, DURATION_UNITS, "duration")


def parse_size(text: str) -> int:
    return _parse(text, SIZE_UNITS, "size")


def _format(value: int, units: list[tuple[str, int]]) -> str:
    for name, scale in units:
        if value and value % scale == 0:
            return f"{value // scale}{name}"
    return f"{value}{units[-1][0]}"


def format_rate(bps: int) -> str:
    return _format(bps, [("Gbit", 10**9), ("Mbit", 10**6), ("kbit", 10**3), ("bit", 1)])


def format_duration(ns: int) -> str:
    return _format(ns, [("s", 10**9), ("ms", 10**6), ("us", 10**3), ("ns", 1)])


def format_size(nbytes: int) -> str:
    return _format(nbytes, [("MB", 1024**2), ("KB", 1024), ("", 1)])
