"""Built-in experiment scenarios shipped with the package."""

from __future__ import annotations

from importlib import resources
from pathlib import Path

from .scenario import ScenarioConfig, parse_scenario

PRESETS = ("rrul", "host-isolation", "diffserv-rrul", "diffserv-voip", "ack-asym")
ALIASES = {"rrul": "rrul_10mbps"}


def _file(name: str):
    stem = ALIASES.get(name, name)
    return resources.files(__package__).joinpath("presets", f"{stem}.scn")


def preset_names() -> list[str]:
    return list(PRESETS)


def preset_text(name: str) -> str:
    f = _file(name)
    if not f.is_file():
        raise KeyError(f"no preset named {name!r} (available: {', '.join(PRESETS)})")
    return f.read_text(encoding="utf-8")


def load_preset(name: str) -> ScenarioConfig:
    return parse_scenario(preset_text(name))


def resolve_scenario(ref: str) -> ScenarioConfig:
    """A scenario file path, a preset name, or ``presets/<name>``."""
    p = Path(ref)
    if p.is_file():
        return parse_scenario(p.read_text(encoding="utf-8"))
    name = ref[len("presets/"):] if ref.startswith("presets/") else ref
    name = name.removesuffix(".scn")
    try:
        return load_preset(name)
    except KeyError:
        raise FileNotFoundError(f"{ref!r} is neither a scenario file nor a preset "
                                f"(presets: {', '.join(PRESETS)})") from None
