"""Discrete-event network simulator around the qdisc."""

from .events import EventLoop
from .link import Link
from .metrics import CSV_COLUMNS, SCHEMA, MetricsLog, Recorder
from .nat import nat_reverse, nat_translate
from .network import Host, Network, TopologyError, run

__all__ = [
    "CSV_COLUMNS", "SCHEMA", "EventLoop", "Host", "Link", "MetricsLog", "Network", "Recorder",
    "TopologyError", "nat_reverse", "nat_translate", "run",
]
