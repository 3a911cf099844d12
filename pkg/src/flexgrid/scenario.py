"""Week-long baseline and EV-flexibility simulations on top of the OPF."""

from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime
from typing import Sequence

import numpy as np

from .apportion import largest_remainder
from .clustering import ClusterAggregates
from .ev_data import MINUTES_PER_DAY
from .grid_model import Network, PerUnitNetwork, demand_distribution
from .opf import OpfSettings, build_instance, solve_instance

log = logging.getLogger(__name__)

DEFAULT_EPSILON_KW = 0.01
DEFAULT_M_T = 1000.0


class ScenarioError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Fleet


@dataclass
class FleetAllocation:
    n_ev: np.ndarray  # (n_cluster, n_bus) integers
    bus_ids: list[str]
    adoption_rate: float = 1.0

    @property
    def total(self) -> int:
        return int(self.n_ev.sum())

    @property
    def per_bus(self) -> np.ndarray:
        return self.n_ev.sum(axis=0)

    @property
    def per_cluster(self) -> np.ndarray:
        return self.n_ev.sum(axis=1)


def allocate_fleet(network: Network, aggregates: ClusterAggregates, total_evs: int,
                   cluster_shares: Sequence[float] | None = None, adoption_rate: float = 1.0) -> FleetAllocation:
    """Place ``total_evs`` on buses by demand share, then split each bus by cluster share."""
    if total_evs < 0:
        raise ScenarioError("total_evs must be non-negative")
    shares = aggregates.shares() if cluster_shares is None else np.asarray(cluster_shares, dtype=float)
    if len(shares) != aggregates.k or abs(math.fsum(shares) - 1.0) > 1e-9:
        raise ScenarioError("cluster shares must have one entry per cluster and sum to 1")
    weights = demand_distribution(network)
    buses = network.bus_ids
    per_bus = largest_remainder([weights[b] for b in buses], int(total_evs))
    n_ev = np.zeros((aggregates.k, len(buses)), dtype=int)
    for j, n in enumerate(per_bus):
        n_ev[:, j] = largest_remainder(shares, n)
    return FleetAllocation(n_ev, buses, adoption_rate)


# ---------------------------------------------------------------------------
# Time-of-day lookups


def window_mean(curve: np.ndarray, start_minute: int, length: int) -> np.ndarray:
    """Mean of a 1,440-minute curve (or stack of curves) over a wrapping window."""
    curve = np.asarray(curve, dtype=float)
    idx = (start_minute + np.arange(length)) % MINUTES_PER_DAY
    return curve[..., idx].mean(axis=-1)


def minute_of_day(ts: datetime) -> int:
    return ts.hour * 60 + ts.minute


def charging_baseline(aggregates: ClusterAggregates, allocation: FleetAllocation, start_minute: int, length: int):
    """EVs charging on average in the window and the load they draw.

    Returns ``(n_charging, ev_load_kw)`` with shapes (n_cluster, n_bus) and
    (n_bus,).  Counts are fractional.
    """
    frac = window_mean(aggregates.frac_charging, start_minute, length)
    power = window_mean(aggregates.centroid_profile_kw, start_minute, length)
    n_charging = allocation.n_ev * frac[:, None]
    ev_load_kw = (allocation.n_ev * power[:, None]).sum(axis=0)
    return n_charging, ev_load_kw


def social_cost(aggregates: ClusterAggregates, i: int, start_minute: int, length: int,
                epsilon: float = DEFAULT_EPSILON_KW) -> float:
    """Cost of asking cluster ``i`` to turn up: reciprocal of its habitual power plus epsilon."""
    if not epsilon > 0:
        raise ScenarioError("epsilon must be positive")
    p = float(window_mean(aggregates.centroid_profile_kw[i], start_minute, length))
    return 1.0 / (p + epsilon)


@dataclass
class FlexSchedule:
    steps: list[int]
    flex_ub: np.ndarray  # (T, n_cluster, n_bus) p.u.
    pi_flex: np.ndarray  # (T, n_cluster)
    n_charging: np.ndarray  # (T, n_cluster, n_bus)
    n_remain: np.ndarray
    ev_load_pu: np.ndarray  # (T, n_bus)


def build_schedule(pu: PerUnitNetwork, aggregates: ClusterAggregates, allocation: FleetAllocation,
                   steps: Sequence[int], epsilon: float = DEFAULT_EPSILON_KW) -> FlexSchedule:
    net = pu.network
    length = max(1, int(round(net.timestep_hours * 60)))
    kw_to_pu = 1e-3 / pu.s_base_mva
    ubs, pis, charging, remain, loads = [], [], [], [], []
    for t in steps:
        m0 = minute_of_day(net.timestamps[t])
        n_ch, load_kw = charging_baseline(aggregates, allocation, m0, length)
        n_rem = allocation.n_ev - n_ch
        if np.any(n_rem < -1e-9):
            log.warning("step %d: more EVs charging than allocated; clamping", t)
        n_rem = np.maximum(n_rem, 0.0)
        ubs.append(n_rem * aggregates.p_max_kw[:, None] * kw_to_pu)
        pis.append([social_cost(aggregates, i, m0, length, epsilon) for i in range(aggregates.k)])
        charging.append(n_ch)
        remain.append(n_rem)
        loads.append(load_kw * kw_to_pu)
    k, nb = aggregates.k, pu.n_bus
    shape = (len(steps), k, nb)
    return FlexSchedule(
        list(steps),
        np.array(ubs).reshape(shape),
        np.array(pis, dtype=float).reshape(len(steps), k),
        np.array(charging).reshape(shape),
        np.array(remain).reshape(shape),
        np.array(loads).reshape(len(steps), nb),
    )


# ---------------------------------------------------------------------------
# Simulation


@dataclass
class SimulationResult:
    label: str
    timestamps: list[datetime]
    step_hours: float
    bus_ids: list[str]
    gen_ids: list[str]
    status: list[str]
    curtail_mw: np.ndarray  # (T, n_gen)
    flex_mw: np.ndarray  # (T, n_cluster, n_bus)
    v_pu: np.ndarray  # (T, n_bus)
    exactness: np.ndarray
    loss_weight: np.ndarray
    objective: np.ndarray
    losses_mw: np.ndarray
    wind_mw: np.ndarray
    demand_mw: np.ndarray
    exactness_tol: float = 1e-6
    notes: dict = field(default_factory=dict)

    @property
    def ok(self) -> np.ndarray:
        return np.array([s == "optimal" for s in self.status], dtype=bool)

    @property
    def failures(self) -> list[tuple[int, str]]:
        return [(t, s) for t, s in enumerate(self.status) if s != "optimal"]

    @property
    def inexact_steps(self) -> list[int]:
        return [t for t in range(len(self.status)) if self.ok[t] and self.exactness[t] > self.exactness_tol]

    @property
    def curtailment_mwh(self) -> float:
        return float(np.sum(self.curtail_mw[self.ok]) * self.step_hours)

    @property
    def flex_energy_mwh(self) -> float:
        return float(np.sum(self.flex_mw[self.ok]) * self.step_hours)


def _solve_step(args):
    inst, settings = args
    sol = solve_instance(inst, settings)
    return sol


def _run(label, pu: PerUnitNetwork, steps, schedule: FlexSchedule | None, use_flex: bool, include_ev_load: bool,
         m_t: float, settings: OpfSettings, jobs: int) -> SimulationResult:
    steps = list(steps)
    if schedule is not None and list(schedule.steps) != steps:
        raise ScenarioError("schedule does not cover the requested horizon")
    loss_weight = 1.0 / m_t
    insts = []
    for n, t in enumerate(steps):
        extra = schedule.ev_load_pu[n] if (schedule is not None and include_ev_load) else None
        # a step with no headroom is the baseline program, solved identically
        if use_flex and schedule is not None and schedule.flex_ub[n].any():
            inst = build_instance(pu, t, schedule.flex_ub[n], schedule.pi_flex[n], loss_weight, extra_demand_p=extra)
        else:
            inst = build_instance(pu, t, loss_weight=loss_weight, extra_demand_p=extra)
        insts.append(inst)
    if jobs > 1 and len(insts) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            sols = list(ex.map(_solve_step, [(i, settings) for i in insts], chunksize=max(1, len(insts) // (4 * jobs))))
    else:
        sols = [_solve_step((i, settings)) for i in insts]

    s = pu.s_base_mva
    k = schedule.flex_ub.shape[1] if schedule is not None else 0
    T = len(steps)
    flex = np.zeros((T, k, pu.n_bus))
    for n, (inst, sol) in enumerate(zip(insts, sols)):
        if sol.ok and use_flex and inst.n_cluster:
            flex[n] = sol.flex * s
    res = SimulationResult(
        label=label,
        timestamps=[pu.network.timestamps[t] for t in steps],
        step_hours=pu.network.timestep_hours,
        bus_ids=list(pu.bus_ids),
        gen_ids=list(pu.gen_ids),
        status=[sol.status for sol in sols],
        curtail_mw=np.array([sol.curtail * s if sol.ok else np.zeros(pu.n_gen) for sol in sols]).reshape(T, pu.n_gen),
        flex_mw=flex,
        v_pu=np.array([np.sqrt(np.maximum(sol.v_sq, 0)) if sol.ok else np.full(pu.n_bus, np.nan) for sol in sols]).reshape(T, pu.n_bus),
        exactness=np.array([sol.exactness for sol in sols]),
        loss_weight=np.array([sol.loss_weight for sol in sols]),
        objective=np.array([sol.objective for sol in sols]),
        losses_mw=np.array([float(np.sum(pu.r_pu * sol.l_sq)) * s if sol.ok else np.nan for sol in sols]),
        wind_mw=np.array([inst.gen_avail * s for inst in insts]).reshape(T, pu.n_gen),
        demand_mw=np.array([inst.demand_p * s for inst in insts]).reshape(T, pu.n_bus),
        exactness_tol=settings.exactness_tol,
    )
    for t, status in res.failures:
        log.error("%s: step %d (%s) failed: %s", label, steps[t], res.timestamps[t].isoformat(), status)
    if res.inexact_steps:
        log.warning("%s: %d steps with a loose relaxation (gap > %g)", label, len(res.inexact_steps), settings.exactness_tol)
    return res


def run_baseline(pu: PerUnitNetwork, steps: Sequence[int], schedule: FlexSchedule | None = None,
                 include_ev_load: bool = True, m_t: float = DEFAULT_M_T, settings: OpfSettings | None = None,
                 jobs: int = 1) -> SimulationResult:
    """Curtailment-only run: no EV turn-up, wind may be curtailed."""
    return _run("baseline", pu, steps, schedule, False, include_ev_load, m_t, settings or OpfSettings(), jobs)


def run_flex(pu: PerUnitNetwork, steps: Sequence[int], schedule: FlexSchedule, include_ev_load: bool = True,
             m_t: float = DEFAULT_M_T, settings: OpfSettings | None = None, jobs: int = 1) -> SimulationResult:
    """Run with per-cluster EV turn-up bounded by the not-yet-charging fleet."""
    res = _run("flex", pu, steps, schedule, True, include_ev_load, m_t, settings or OpfSettings(), jobs)
    bound_mw = schedule.flex_ub * pu.s_base_mva
    over = res.flex_mw - bound_mw
    if np.any(over[res.ok] > 1e-8 * pu.s_base_mva):
        raise ScenarioError("flex dispatch exceeds its fleet bound")
    return res


def curtailment_reduction(baseline: SimulationResult, flex: SimulationResult) -> float:
    """Percentage of baseline curtailment removed by flexibility (0 when nothing was curtailed)."""
    if baseline.timestamps != flex.timestamps:
        raise ScenarioError("baseline and flex runs cover different horizons")
    base = baseline.curtailment_mwh
    if base <= 0:
        return 0.0
    return 100.0 * (1.0 - flex.curtailment_mwh / base)


def default_jobs() -> int:
    return max(1, len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else (os.cpu_count() or 1))
