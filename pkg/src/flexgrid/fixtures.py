"""Paths to the bundled example networks and run configs."""

from __future__ import annotations

from importlib import resources
from pathlib import Path

FIXTURES = ("two_bus", "two_bus_overvoltage", "five_bus", "oversupply_week")


def fixture_dir(name: str) -> Path:
    if name not in FIXTURES:
        raise KeyError(f"unknown fixture {name!r}; available: {FIXTURES}")
    return Path(str(resources.files("flexgrid") / "data" / name))


def network_path(name: str) -> Path:
    return fixture_dir(name) / "network.json"
