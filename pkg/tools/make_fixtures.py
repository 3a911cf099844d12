"""Regenerate the bundled network fixtures under src/flexgrid/data.

Usage: python3 tools/make_fixtures.py [--clusters]

``--clusters`` also rebuilds the oversupply-week cluster model by running
the clustering pipeline on the fixture's config.  Output is deterministic.
"""

from __future__ import annotations

import argparse
import shutil
from datetime import datetime, timedelta, timezone
from pathlib import Path

import numpy as np

from flexgrid.grid_model import Bus, Demand, Generator, Line, Network, save_network, validate_network

DATA = Path(__file__).resolve().parents[1] / "src" / "flexgrid" / "data"
T0 = datetime(2020, 6, 1, tzinfo=timezone.utc)  # a Monday


def stamps(n, minutes=30):
    return [T0 + timedelta(minutes=minutes * i) for i in range(n)]


def write(name, net):
    validate_network(net)
    out = DATA / name
    if out.exists():
        shutil.rmtree(out / "profiles", ignore_errors=True)
    out.mkdir(parents=True, exist_ok=True)
    save_network(net, out / "network.json")
    print(f"wrote {out}")


def two_bus():
    buses = [Bus("1", 11.0, is_slack=True), Bus("2", 11.0)]
    lines = [Line("L12", "1", "2", 1.21, 2.42, 10.0)]
    gens = [Generator("W2", "2", "wind_curtailable", "wind", curtail_cost=1000.0)]
    demands = [Demand("2", "load", 0.2)]
    series = {"load": np.array([3.0, 2.0, 0.5, 0.0]), "wind": np.array([0.0, 1.0, 5.0, 0.0])}
    return Network("two_bus", buses, lines, gens, demands, series, stamps(4), 10.0, slack_export_limit_mw=3.0)


def two_bus_overvoltage():
    buses = [Bus("1", 11.0, is_slack=True), Bus("2", 11.0, v_max_pu=1.05)]
    lines = [Line("L12", "1", "2", 1.21, 2.42, 10.0)]
    gens = [Generator("W2", "2", "wind_curtailable", "wind", curtail_cost=1000.0)]
    demands = [Demand("2", "load", 0.2)]
    series = {"load": np.array([0.2]), "wind": np.array([8.0])}
    return Network("two_bus_overvoltage", buses, lines, gens, demands, series, stamps(1), 10.0)


def daily_load(n_steps, peak, rng, minutes=30):
    """Domestic summer shape: low night, morning shoulder, evening peak."""
    h = (np.arange(n_steps) * minutes / 60.0) % 24
    shape = (0.45 + 0.30 * np.exp(-0.5 * ((h - 8.0) / 1.5) ** 2)
             + 0.55 * np.exp(-0.5 * ((h - 18.5) / 2.0) ** 2))
    noise = 1.0 + 0.05 * rng.standard_normal(n_steps)
    return np.round(peak * shape / shape.max() * noise, 6).clip(min=0.0)


def wind_week(n_steps, capacity, day_level, rng):
    """Smooth AR(1) wind around a per-day mean capacity factor."""
    per_day = 48
    level = np.repeat(day_level, per_day)[:n_steps]
    ar = np.zeros(n_steps)
    for i in range(1, n_steps):
        ar[i] = 0.95 * ar[i - 1] + 0.04 * rng.standard_normal()
    cf = np.clip(level + ar, 0.0, 0.97)
    return np.round(capacity * cf, 6)


def five_bus():
    rng = np.random.default_rng(5)
    n = 48
    buses = [Bus("1", 11.0, is_slack=True)] + [Bus(str(i), 11.0) for i in range(2, 6)]
    lines = [
        Line("L12", "1", "2", 0.5, 1.0, 8.0),
        Line("L23", "2", "3", 0.8, 1.2, 8.0),
        Line("L34", "3", "4", 0.8, 1.2, 8.0),
        Line("L25", "2", "5", 0.6, 0.9, 8.0),
    ]
    gens = [Generator("W4", "4", "wind_curtailable", "wind4", curtail_cost=1000.0)]
    peaks = {"2": 1.5, "3": 1.0, "4": 0.6, "5": 1.2}
    demands = [Demand(b, f"load{b}", 0.25) for b in peaks]
    series = {f"load{b}": daily_load(n, p, rng) for b, p in peaks.items()}
    series["wind4"] = wind_week(n, 6.0, [0.7], rng)
    return Network("five_bus", buses, lines, gens, demands, series, stamps(n), 10.0, slack_export_limit_mw=4.0)


def oversupply_week():
    rng = np.random.default_rng(2020)
    n = 336
    kv = 33.0
    buses = [Bus("GSP", kv, is_slack=True)] + [Bus(f"B{i}", kv) for i in range(1, 8)]
    lines = [
        Line("GSP-B1", "GSP", "B1", 2.0, 4.0, 15.0),
        Line("B1-B2", "B1", "B2", 3.0, 5.0, 15.0),
        Line("B2-B3", "B2", "B3", 3.0, 5.0, 15.0),
        Line("B1-B4", "B1", "B4", 4.0, 6.0, 15.0),
        Line("B4-B5", "B4", "B5", 3.0, 5.0, 15.0),
        Line("B4-B6", "B4", "B6", 4.0, 6.0, 15.0),
        Line("B6-B7", "B6", "B7", 5.0, 7.0, 15.0),
    ]
    gens = [
        Generator("W3", "B3", "wind_curtailable", "wind_B3", curtail_cost=1000.0),
        Generator("W7", "B7", "wind_curtailable", "wind_B7", curtail_cost=1000.0),
    ]
    peaks = {"B1": 0.9, "B2": 0.6, "B3": 0.4, "B4": 0.8, "B5": 0.7, "B6": 0.5, "B7": 0.3}
    demands = [Demand(b, f"load_{b}", 0.2) for b in peaks]
    series = {f"load_{b}": daily_load(n, p, rng) for b, p in peaks.items()}
    days = [0.85, 0.75, 0.35, 0.2, 0.55, 0.9, 0.65]
    series["wind_B3"] = wind_week(n, 5.0, days, rng)
    series["wind_B7"] = wind_week(n, 4.0, days, rng)
    return Network("oversupply_week", buses, lines, gens, demands, series, stamps(n), 10.0,
                   slack_export_limit_mw=2.5)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--clusters", action="store_true", help="rebuild the oversupply-week cluster model")
    args = ap.parse_args(argv)
    for name, build in [("two_bus", two_bus), ("two_bus_overvoltage", two_bus_overvoltage), ("five_bus", five_bus),
                        ("oversupply_week", oversupply_week)]:
        write(name, build())
    if args.clusters:
        from flexgrid.cli import main as cli

        cfg = DATA / "oversupply_week" / "config.toml"
        code = cli(["cluster", "--config", str(cfg)])
        if code:
            raise SystemExit(code)
        out = DATA / "oversupply_week" / "out"
        shutil.copy(out / "clusters.json", DATA / "oversupply_week" / "clusters.json")
        shutil.copy(out / "k_diagnostics.csv", DATA / "oversupply_week" / "k_diagnostics.csv")
        shutil.rmtree(out)


if __name__ == "__main__":
    main()
