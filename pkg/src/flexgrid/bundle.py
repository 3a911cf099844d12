"""Results bundle: writer, reader and cross-consistency check.

A bundle is a directory holding ``summary.json``, ``timeseries.csv``
(long format ``t,quantity,element,value``) and ``flex_by_cluster.csv``
(``t,cluster,bus,mw``).  Floats are written with ``repr`` and JSON keys
are sorted, so equal inputs give byte-identical files.
"""

from __future__ import annotations

import csv
import json
import math
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .ev_data import format_timestamp
from .scenario import FleetAllocation, SimulationResult, curtailment_reduction

RESULT_SCHEMA = "flexgrid.result.v1"
SUMMARY = "summary.json"
TIMESERIES = "timeseries.csv"
FLEX_BY_CLUSTER = "flex_by_cluster.csv"
CONSISTENCY_TOL = 1e-6


class BundleError(ValueError):
    """Missing or unreadable bundle."""


class ConsistencyError(ValueError):
    """CSV content disagrees with the summary."""


def _num(x):
    x = float(x)
    return x if math.isfinite(x) else None


def _run_summary(res: SimulationResult) -> dict:
    ok = res.ok
    return {
        "curtailment_mwh": res.curtailment_mwh,
        "flex_energy_mwh": res.flex_energy_mwh,
        "losses_mwh": float(np.sum(res.losses_mw[ok]) * res.step_hours),
        "max_v_pu": _num(np.max(res.v_pu[ok])) if ok.any() else None,
        "max_exactness": _num(np.max(res.exactness[ok])) if ok.any() else None,
        "max_loss_weight": _num(np.max(res.loss_weight[ok])) if ok.any() else None,
        "n_failed": len(res.failures),
        "n_inexact": len(res.inexact_steps),
        "objective_total": _num(np.sum(res.objective[ok])),
    }


def write_bundle(out_dir, baseline: SimulationResult, flex: SimulationResult, allocation: FleetAllocation,
                 meta: dict) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stamps = [format_timestamp(t) for t in baseline.timestamps]
    failures = [
        {"run": res.label, "step": i, "t": stamps[i], "status": status}
        for res in (baseline, flex)
        for i, status in res.failures
    ]
    summary = {
        "schema": RESULT_SCHEMA,
        "start": stamps[0] if stamps else None,
        "steps": len(stamps),
        "step_hours": baseline.step_hours,
        "fleet": {
            "total_evs": allocation.total,
            "adoption_rate": allocation.adoption_rate,
            "per_bus": {b: int(n) for b, n in zip(allocation.bus_ids, allocation.per_bus)},
            "per_cluster": [int(n) for n in allocation.per_cluster],
        },
        "runs": {"baseline": _run_summary(baseline), "flex": _run_summary(flex)},
        "curtailment_reduction_pct": curtailment_reduction(baseline, flex),
        "failures": failures,
        **meta,
    }
    (out / SUMMARY).write_text(json.dumps(summary, indent=1, sort_keys=True, default=str) + "\n", encoding="utf-8")

    with (out / TIMESERIES).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "quantity", "element", "value"])
        for n, ts in enumerate(stamps):
            for j, b in enumerate(baseline.bus_ids):
                w.writerow([ts, "demand_mw", b, repr(float(baseline.demand_mw[n, j]))])
            for g, gid in enumerate(baseline.gen_ids):
                w.writerow([ts, "wind_available_mw", gid, repr(float(baseline.wind_mw[n, g]))])
            for res in (baseline, flex):
                p = res.label
                w.writerow([ts, f"{p}_ok", "", "1" if res.ok[n] else "0"])
                for g, gid in enumerate(res.gen_ids):
                    w.writerow([ts, f"{p}_curtail_mw", gid, repr(float(res.curtail_mw[n, g]))])
                for j, b in enumerate(res.bus_ids):
                    w.writerow([ts, f"{p}_v_pu", b, repr(float(res.v_pu[n, j]))])
                w.writerow([ts, f"{p}_losses_mw", "", repr(float(res.losses_mw[n]))])
                w.writerow([ts, f"{p}_exactness", "", repr(float(res.exactness[n]))])
                w.writerow([ts, f"{p}_loss_weight", "", repr(float(res.loss_weight[n]))])

    with (out / FLEX_BY_CLUSTER).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "cluster", "bus", "mw"])
        for n, ts in enumerate(stamps):
            for i in range(flex.flex_mw.shape[1]):
                for j, b in enumerate(flex.bus_ids):
                    w.writerow([ts, i, b, repr(float(flex.flex_mw[n, i, j]))])
    return summary


# ---------------------------------------------------------------------------
# Reading and checking


@dataclass
class Bundle:
    summary: dict
    series: dict  # (quantity, element) -> list of (t, value)
    flex_rows: list  # (t, cluster, bus, mw)


def read_bundle(path) -> Bundle:
    root = Path(path)
    files = [root / SUMMARY, root / TIMESERIES, root / FLEX_BY_CLUSTER]
    missing = [f.name for f in files if not f.is_file()]
    if missing:
        raise BundleError(f"{root}: missing {', '.join(missing)}")
    try:
        summary = json.loads(files[0].read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise BundleError(f"{files[0]}: invalid JSON: {exc}") from exc
    if not isinstance(summary, dict) or summary.get("schema") != RESULT_SCHEMA:
        raise BundleError(f"{files[0]}: expected schema {RESULT_SCHEMA}")
    series = defaultdict(list)
    flex_rows = []
    try:
        with files[1].open(newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            if next(reader, None) != ["t", "quantity", "element", "value"]:
                raise BundleError(f"{files[1]}: bad header")
            for row in reader:
                t, q, e, v = row
                series[(q, e)].append((t, float(v)))
        with files[2].open(newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            if next(reader, None) != ["t", "cluster", "bus", "mw"]:
                raise BundleError(f"{files[2]}: bad header")
            for t, c, b, mw in reader:
                flex_rows.append((t, int(c), b, float(mw)))
    except (ValueError, csv.Error) as exc:
        if isinstance(exc, BundleError):
            raise
        raise BundleError(f"{root}: unreadable CSV: {exc}") from exc
    return Bundle(summary, dict(series), flex_rows)


def recompute_totals(bundle: Bundle) -> dict:
    """Totals rebuilt from the CSVs alone."""
    s = bundle.series
    h = float(bundle.summary["step_hours"])
    out = {}
    for run in ("baseline", "flex"):
        ok = {t for t, v in s.get((f"{run}_ok", ""), []) if v == 1.0}
        curtail = math.fsum(v for (q, _), rows in s.items() if q == f"{run}_curtail_mw" for t, v in rows if t in ok)
        v_ok = [v for (q, _), rows in s.items() if q == f"{run}_v_pu" for t, v in rows if t in ok]
        gaps = [v for t, v in s.get((f"{run}_exactness", ""), []) if t in ok]
        out[run] = {
            "curtailment_mwh": curtail * h,
            "max_v_pu": max(v_ok) if v_ok else None,
            "max_exactness": max(gaps) if gaps else None,
            "ok_steps": ok,
        }
    flex_ok = out["flex"]["ok_steps"]
    out["flex"]["flex_energy_mwh"] = math.fsum(mw for t, _, _, mw in bundle.flex_rows if t in flex_ok) * h
    base = out["baseline"]["curtailment_mwh"]
    out["curtailment_reduction_pct"] = 0.0 if base <= 0 else 100.0 * (1.0 - out["flex"]["curtailment_mwh"] / base)
    return out


def check_consistency(bundle: Bundle, tol: float = CONSISTENCY_TOL) -> list[str]:
    """Mismatches between the summary and totals recomputed from the CSVs."""
    rec = recompute_totals(bundle)
    summ = bundle.summary
    problems = []

    def cmp(label, a, b):
        if a is None or b is None:
            if a is not b:
                problems.append(f"{label}: summary {a!r} vs recomputed {b!r}")
        elif abs(float(a) - float(b)) > tol:
            problems.append(f"{label}: summary {a!r} vs recomputed {b!r}")

    try:
        for run in ("baseline", "flex"):
            r = summ["runs"][run]
            cmp(f"{run}.curtailment_mwh", r["curtailment_mwh"], rec[run]["curtailment_mwh"])
            cmp(f"{run}.max_v_pu", r["max_v_pu"], rec[run]["max_v_pu"])
            cmp(f"{run}.max_exactness", r["max_exactness"], rec[run]["max_exactness"])
            n_ok = int(summ["steps"]) - int(r["n_failed"])
            if n_ok != len(rec[run]["ok_steps"]):
                problems.append(f"{run}: {n_ok} successful steps in summary, {len(rec[run]['ok_steps'])} in CSV")
        cmp("flex.flex_energy_mwh", summ["runs"]["flex"]["flex_energy_mwh"], rec["flex"]["flex_energy_mwh"])
        cmp("curtailment_reduction_pct", summ["curtailment_reduction_pct"], rec["curtailment_reduction_pct"])
    except (KeyError, TypeError) as exc:
        raise BundleError(f"summary is missing a field: {exc}") from exc
    return problems
