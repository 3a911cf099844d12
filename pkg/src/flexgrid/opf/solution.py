"""Solving OPF instances and turning the conic solution into grid quantities."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .backends import make_backend
from .model import ConicProgram, OpfInstance, assemble_conic

log = logging.getLogger(__name__)

EXACTNESS_TOL = 1e-6
CONE_TOL = 1e-9


@dataclass
class OpfSolution:
    status: str
    v_sq: np.ndarray
    p: np.ndarray
    q: np.ndarray
    l_sq: np.ndarray
    flex: np.ndarray  # (n_cluster, n_bus)
    curtail: np.ndarray
    q_gen: np.ndarray
    p_slack: float
    q_slack: float
    objective_parts: dict
    exactness: float
    loss_weight: float
    iterations: int = 0
    duality_gap: float = 0.0
    residuals: dict = field(default_factory=dict)
    detail: str = ""
    escalations: int = 0

    @property
    def s_flow(self) -> np.ndarray:
        return self.p + 1j * self.q

    @property
    def objective(self) -> float:
        return float(sum(self.objective_parts.values()))

    @property
    def ok(self) -> bool:
        return self.status == "optimal"


def _failed(inst: OpfInstance, status: str, detail: str) -> OpfSolution:
    net = inst.network
    nan_b, nan_l = np.full(net.n_bus, np.nan), np.full(net.n_line, np.nan)
    return OpfSolution(status, nan_b, nan_l, nan_l.copy(), nan_l.copy(), np.full(inst.flex_ub.shape, np.nan),
                       np.full(net.n_gen, np.nan), np.full(net.n_gen, np.nan), np.nan, np.nan,
                       {"flex_cost": np.nan, "curtail_cost": np.nan, "loss_term": np.nan}, np.nan,
                       inst.loss_weight, detail=detail)


def merit_order(flex: np.ndarray, curtail: np.ndarray, inst: OpfInstance):
    """Redistribute each bus's total absorption (EV turn-up plus curtailment) cheapest-first.

    Co-located flexibility and curtailment have identical network effect,
    so this leaves every constraint satisfied and cannot raise the cost;
    it only removes interior-point smearing between substitutes.
    """
    net = inst.network
    flex = np.clip(flex, 0.0, inst.flex_ub)
    ub_c = np.where(net.gen_curtailable, np.maximum(inst.gen_avail, 0.0), 0.0)
    curtail = np.clip(curtail, 0.0, ub_c)
    out_f, out_c = flex.copy(), curtail.copy()
    for j in range(net.n_bus):
        items = [(inst.pi_flex[i], 0, i, inst.flex_ub[i, j]) for i in range(inst.n_cluster)]
        items += [(inst.pi_curtail[g], 1, g, ub_c[g]) for g in np.flatnonzero(net.gen_bus == j)]
        if len(items) < 2:
            continue
        total = flex[:, j].sum() + sum(curtail[g] for _, kind, g, _ in items if kind == 1)
        for cost, kind, idx, ub in sorted(items, key=lambda it: (it[0], it[1], it[2])):
            take = min(ub, total)
            if kind == 0:
                out_f[idx, j] = take
            else:
                out_c[idx] = take
            total -= take
        if total > 1e-12:
            log.debug("bus %d: merit-order leftover %.3g", j, total)
    return out_f, out_c


def objective_parts(inst: OpfInstance, l_sq, flex, curtail) -> dict:
    return {
        "flex_cost": float(np.sum(inst.pi_flex[:, None] * flex)),
        "curtail_cost": float(np.sum(inst.pi_curtail * curtail)),
        "loss_term": float(inst.loss_weight * np.sum(inst.network.z_abs * l_sq)),
    }


def residuals(sol: OpfSolution, inst: OpfInstance) -> dict:
    """Constraint residuals recomputed from the solution fields alone."""
    net = inst.network
    r, x = net.r_pu, net.x_pu
    bal_p = -inst.demand_p.copy()
    bal_q = -inst.demand_q.copy()
    for k in range(net.n_line):
        c, pa = net.child[k], net.parent[k]
        bal_p[c] += sol.p[k] - r[k] * sol.l_sq[k]
        bal_q[c] += sol.q[k] - x[k] * sol.l_sq[k]
        bal_p[pa] -= sol.p[k]
        bal_q[pa] -= sol.q[k]
    for g in range(net.n_gen):
        bal_p[net.gen_bus[g]] += inst.gen_avail[g] - sol.curtail[g]
        bal_q[net.gen_bus[g]] += sol.q_gen[g]
    bal_p -= sol.flex.sum(axis=0)
    bal_p[net.slack] += sol.p_slack
    bal_q[net.slack] += sol.q_slack
    ohm = (sol.v_sq[net.child] - sol.v_sq[net.parent] + 2 * (r * sol.p + x * sol.q) - (r ** 2 + x ** 2) * sol.l_sq)
    cone = sol.v_sq[net.parent] * sol.l_sq - (sol.p ** 2 + sol.q ** 2)
    return {
        "balance": float(np.max(np.abs(np.concatenate([bal_p, bal_q])), initial=0.0)),
        "ohm": float(np.max(np.abs(ohm), initial=0.0)),
        "cone_min": float(np.min(cone, initial=0.0)),
        "slack_voltage": float(abs(sol.v_sq[net.slack] - net.v_slack_pu ** 2)),
    }


def _extract(prog: ConicProgram, inst: OpfInstance, xsol, raw) -> OpfSolution:
    L = prog.layout
    net = inst.network
    flex = xsol[L.flex].reshape(inst.n_cluster, net.n_bus)
    flex, curtail = merit_order(flex, xsol[L.curtail], inst)
    v_sq, p, q, l_sq = xsol[L.v].copy(), xsol[L.p].copy(), xsol[L.q].copy(), xsol[L.l].copy()
    parts = objective_parts(inst, l_sq, flex, curtail)
    gap = v_sq[net.parent] * l_sq - (p ** 2 + q ** 2)
    sol = OpfSolution(
        status="optimal",
        v_sq=v_sq,
        p=p,
        q=q,
        l_sq=l_sq,
        flex=flex,
        curtail=curtail,
        q_gen=xsol[L.qgen].copy(),
        p_slack=float(xsol[L.p_slack]),
        q_slack=float(xsol[L.q_slack]),
        objective_parts=parts,
        exactness=float(np.max(np.abs(gap), initial=0.0)),
        loss_weight=inst.loss_weight,
        iterations=raw.iterations,
        duality_gap=abs(raw.objective - raw.dual_objective) / max(1.0, abs(raw.objective)),
        detail=raw.detail,
    )
    sol.residuals = residuals(sol, inst)
    return sol


def solve(prog: ConicProgram, inst: OpfInstance, backend: str = "clarabel", backend_settings: dict | None = None) -> OpfSolution:
    """Solve an assembled program; retries once with normalised costs, then looser tolerances."""
    settings = dict(backend_settings or {})
    loose = {**settings, "tol_gap_abs": 1e-8, "tol_gap_rel": 1e-8, "tol_feas": 1e-8}
    norm = 1.0 / max(float(np.max(np.abs(prog.c), initial=0.0)), 1e-12)
    normalised = ConicProgram(prog.c * norm, prog.A, prog.b, prog.n_zero, prog.n_nonneg, prog.soc_dims,
                              prog.layout, prog.counts)
    last = None
    for candidate, st in ((prog, settings), (normalised, settings), (normalised, loose)):
        raw = make_backend(backend, **st).solve(candidate)
        last = raw
        if raw.status == "optimal":
            if candidate is not prog:
                raw.objective /= norm
                raw.dual_objective /= norm
            return _extract(prog, inst, raw.x, raw)
        if raw.status == "infeasible":
            return _failed(inst, "infeasible", raw.detail)
    return _failed(inst, "numeric_failure", last.detail if last else "")


@dataclass
class OpfSettings:
    backend: str = "clarabel"
    backend_settings: dict = field(default_factory=dict)
    exactness_tol: float = EXACTNESS_TOL
    loss_escalation: float = 10.0
    max_escalations: int = 8
    refine_steps: int = 4


def solve_instance(inst: OpfInstance, settings: OpfSettings | None = None) -> OpfSolution:
    """Solve with the smallest loss weight (from the instance's upwards) that keeps the relaxation tight.

    While the cone gap exceeds ``exactness_tol`` the weight grows by
    ``loss_escalation``; once a tight weight is found, ``refine_steps``
    log-scale bisections move it back down toward the threshold.  With
    ``max_escalations = 0`` this is a single solve.
    """
    settings = settings or OpfSettings()

    def run(w):
        cur = inst.with_loss_weight(w)
        return solve(assemble_conic(cur), cur, settings.backend, settings.backend_settings)

    def tight(sol):
        return sol.exactness <= settings.exactness_tol

    w = inst.loss_weight
    sol = run(w)
    n = 0
    lo = None
    while sol.ok and not tight(sol) and n < settings.max_escalations:
        lo = w
        w *= settings.loss_escalation
        n += 1
        sol = run(w)
    if sol.ok and tight(sol) and lo is not None:
        hi = w
        for _ in range(settings.refine_steps):
            mid = (lo * hi) ** 0.5
            trial = run(mid)
            n += 1
            if not trial.ok:
                break
            if tight(trial):
                hi, sol = mid, trial
            else:
                lo = mid
    sol.escalations = n
    return sol


# ---------------------------------------------------------------------------
# Diagnostics


@dataclass
class ExactnessReport:
    line_ids: list[str]
    gaps: np.ndarray
    max_gap: float
    flagged: bool


def exactness_report(sol: OpfSolution, inst: OpfInstance, tol: float = EXACTNESS_TOL) -> ExactnessReport:
    if not sol.ok:
        raise ValueError("exactness is only defined for optimal solutions")
    net = inst.network
    gaps = sol.v_sq[net.parent] * sol.l_sq - (sol.p ** 2 + sol.q ** 2)
    if np.any(gaps < -CONE_TOL):
        log.warning("cone violated on lines %s", [net.line_ids[k] for k in np.flatnonzero(gaps < -CONE_TOL)])
    mx = float(np.max(gaps, initial=0.0))
    return ExactnessReport(list(net.line_ids), gaps, mx, mx > tol)


@dataclass
class OperatingPoint:
    v_pu: np.ndarray
    i_pu: np.ndarray
    losses_pu: np.ndarray
    total_losses_pu: float
    physical: bool

    @property
    def label(self) -> str:
        return "physical" if self.physical else "relaxed, not physical"


def recover_operating_point(sol: OpfSolution, inst: OpfInstance, tol: float = EXACTNESS_TOL) -> OperatingPoint:
    net = inst.network
    losses = net.r_pu * sol.l_sq
    physical = sol.ok and sol.exactness <= tol
    return OperatingPoint(np.sqrt(np.maximum(sol.v_sq, 0.0)), np.sqrt(np.maximum(sol.l_sq, 0.0)), losses,
                          float(losses.sum()), physical)


def dump_solution(sol: OpfSolution, inst: OpfInstance, path) -> None:
    """Write ``element_type,id,quantity,value_pu`` rows plus summary rows."""
    net = inst.network
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["element_type", "id", "quantity", "value_pu"])
        for j, b in enumerate(net.bus_ids):
            w.writerow(["bus", b, "v_sq", repr(float(sol.v_sq[j]))])
        for k, ln in enumerate(net.line_ids):
            w.writerow(["line", ln, "p", repr(float(sol.p[k]))])
            w.writerow(["line", ln, "q", repr(float(sol.q[k]))])
            w.writerow(["line", ln, "l_sq", repr(float(sol.l_sq[k]))])
        for g, gid in enumerate(net.gen_ids):
            w.writerow(["generator", gid, "curtail", repr(float(sol.curtail[g]))])
        for i in range(inst.n_cluster):
            for j, b in enumerate(net.bus_ids):
                w.writerow(["flex", f"{i}@{b}", "flex", repr(float(sol.flex[i, j]))])
        for key in ("flex_cost", "curtail_cost", "loss_term"):
            w.writerow(["summary", "", key, repr(float(sol.objective_parts[key]))])
        w.writerow(["summary", "", "exactness", repr(float(sol.exactness))])
        w.writerow(["summary", "", "status", sol.status])
