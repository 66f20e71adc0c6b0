"""Scenario files, presets, CLI and result persistence."""

from .library import PRESETS, load_preset, preset_text, resolve_scenario
from .qdiscspec import QdiscSpec, QdiscSpecError, format_qdisc, parse_qdisc
from .scenario import (
    EndpointConfig,
    HostConfig,
    LinkConfig,
    ScenarioConfig,
    ScenarioError,
    parse_scenario,
    serialise_scenario,
)

__all__ = [
    "PRESETS", "EndpointConfig", "HostConfig", "LinkConfig", "QdiscSpec", "QdiscSpecError",
    "ScenarioConfig", "ScenarioError", "format_qdisc", "load_preset", "parse_qdisc",
    "parse_scenario", "preset_text", "resolve_scenario", "serialise_scenario",
]
