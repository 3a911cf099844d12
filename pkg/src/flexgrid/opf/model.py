"""Per-timestep OPF instances and their conic (SOCP) form.

Variables are squared voltage magnitudes ``v``, sending-end line flows
``P + jQ``, squared line currents ``l``, per-cluster-per-bus EV turn-up,
curtailment per generator, generator reactive output and the slack
injection.  The non-convex ``v * l = |S|^2`` is relaxed to a rotated
second-order cone.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from ..grid_model import PerUnitNetwork


class OpfInputError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class OpfInstance:
    network: PerUnitNetwork
    t: int
    demand_p: np.ndarray  # (n_bus,) p.u., includes any baseline EV load
    demand_q: np.ndarray
    gen_avail: np.ndarray  # (n_gen,) p.u.
    flex_ub: np.ndarray  # (n_cluster, n_bus) p.u.
    pi_flex: np.ndarray  # (n_cluster,)
    pi_curtail: np.ndarray  # (n_gen,)
    loss_weight: float

    @property
    def n_cluster(self) -> int:
        return self.flex_ub.shape[0]

    def with_loss_weight(self, w: float) -> "OpfInstance":
        return OpfInstance(self.network, self.t, self.demand_p, self.demand_q, self.gen_avail, self.flex_ub,
                           self.pi_flex, self.pi_curtail, float(w))

    def with_costs(self, factor: float) -> "OpfInstance":
        return OpfInstance(self.network, self.t, self.demand_p, self.demand_q, self.gen_avail, self.flex_ub,
                           self.pi_flex * factor, self.pi_curtail * factor, self.loss_weight * factor)

    def with_flex_ub(self, flex_ub) -> "OpfInstance":
        return OpfInstance(self.network, self.t, self.demand_p, self.demand_q, self.gen_avail,
                           np.asarray(flex_ub, dtype=float), self.pi_flex, self.pi_curtail, self.loss_weight)


def build_instance(
    net: PerUnitNetwork,
    t: int,
    flex_ub=None,
    pi_flex=None,
    loss_weight: float = 1e-3,
    extra_demand_p=None,
    extra_demand_q=None,
) -> OpfInstance:
    """Snapshot of the network at step ``t`` with EV turn-up bounds and costs.

    ``flex_ub`` is (n_cluster, n_bus) in p.u.; omit it for a run without
    flexibility.  Curtailment costs come from the generators.
    """
    if not 0 <= t < net.horizon:
        raise OpfInputError(f"timestep {t} outside horizon [0, {net.horizon})")
    if flex_ub is None:
        flex_ub = np.zeros((0, net.n_bus))
        pi_flex = np.zeros(0)
    flex_ub = np.atleast_2d(np.asarray(flex_ub, dtype=float))
    pi_flex = np.asarray(pi_flex, dtype=float).ravel()
    if flex_ub.shape != (len(pi_flex), net.n_bus):
        raise OpfInputError(f"flex_ub shape {flex_ub.shape} does not match ({len(pi_flex)}, {net.n_bus})")
    if np.any(flex_ub < 0) or not np.all(np.isfinite(flex_ub)):
        raise OpfInputError("negative or non-finite flexibility bound")
    if np.any(pi_flex <= 0) or not np.all(np.isfinite(pi_flex)):
        raise OpfInputError("social-impact costs must be positive and finite")
    if not loss_weight > 0:
        raise OpfInputError("loss_weight must be positive")
    pi_curtail = net.curtail_cost.astype(float)
    if len(pi_flex) and np.any(net.gen_curtailable):
        top = pi_flex.max()
        cheap = [net.gen_ids[g] for g in np.flatnonzero(net.gen_curtailable) if not pi_curtail[g] > top]
        if cheap:
            raise OpfInputError(
                f"curtailment cost of {cheap} does not exceed the largest social-impact cost {top:g}"
            )
    demand_p = net.demand_p[t].copy()
    demand_q = net.demand_q[t].copy()
    if extra_demand_p is not None:
        demand_p = demand_p + np.asarray(extra_demand_p, dtype=float)
    if extra_demand_q is not None:
        demand_q = demand_q + np.asarray(extra_demand_q, dtype=float)
    return OpfInstance(net, t, demand_p, demand_q, net.gen_p[t].copy(), flex_ub, pi_flex, pi_curtail,
                       float(loss_weight))


# ---------------------------------------------------------------------------
# Conic form


@dataclass(frozen=True)
class Layout:
    n_bus: int
    n_line: int
    n_cluster: int
    n_gen: int

    @property
    def v(self):
        return slice(0, self.n_bus)

    @property
    def p(self):
        s = self.n_bus
        return slice(s, s + self.n_line)

    @property
    def q(self):
        s = self.n_bus + self.n_line
        return slice(s, s + self.n_line)

    @property
    def l(self):  # noqa: E743
        s = self.n_bus + 2 * self.n_line
        return slice(s, s + self.n_line)

    @property
    def flex(self):
        s = self.n_bus + 3 * self.n_line
        return slice(s, s + self.n_cluster * self.n_bus)

    @property
    def curtail(self):
        s = self.flex.stop
        return slice(s, s + self.n_gen)

    @property
    def qgen(self):
        s = self.curtail.stop
        return slice(s, s + self.n_gen)

    @property
    def p_slack(self) -> int:
        return self.qgen.stop

    @property
    def q_slack(self) -> int:
        return self.qgen.stop + 1

    @property
    def n(self) -> int:
        return self.qgen.stop + 2

    def flex_index(self, i: int, j: int) -> int:
        return self.flex.start + i * self.n_bus + j


@dataclass(frozen=True, eq=False)
class ConicProgram:
    """``min c'x  s.t.  b - A x in K`` with K = zero x nonneg x SOC blocks."""

    c: np.ndarray
    A: sp.csc_matrix
    b: np.ndarray
    n_zero: int
    n_nonneg: int
    soc_dims: tuple[int, ...]
    layout: Layout
    counts: dict = field(default_factory=dict)


class _Rows:
    def __init__(self):
        self.rows, self.cols, self.vals, self.rhs = [], [], [], []

    def add(self, terms, rhs):
        r = len(self.rhs)
        for col, val in terms:
            if val != 0.0:
                self.rows.append(r)
                self.cols.append(col)
                self.vals.append(val)
        self.rhs.append(rhs)

    def __len__(self):
        return len(self.rhs)


def assemble_conic(inst: OpfInstance) -> ConicProgram:
    """Branch-flow model with the cone relaxation, as a standard conic program.

    Row blocks, in order: slack voltage and Ohm's law per line (zero cone),
    active/reactive balance per bus (zero cone), boxes (nonneg cone),
    relaxation cones then thermal cones (SOC, 4 and 3 rows each).
    Constraints are written as ``A x + s = b`` so each row stores the
    coefficients of ``b - s``.
    """
    net = inst.network
    L = Layout(net.n_bus, net.n_line, inst.n_cluster, net.n_gen)
    r, x, z2 = net.r_pu, net.x_pu, net.r_pu ** 2 + net.x_pu ** 2
    vi = lambda j: L.v.start + j  # noqa: E731
    pi = lambda k: L.p.start + k  # noqa: E731
    qi = lambda k: L.q.start + k  # noqa: E731
    li = lambda k: L.l.start + k  # noqa: E731

    eq = _Rows()
    eq.add([(vi(net.slack), 1.0)], net.v_slack_pu ** 2)
    for k in range(net.n_line):
        eq.add([(vi(net.child[k]), 1.0), (vi(net.parent[k]), -1.0), (pi(k), 2 * r[k]), (qi(k), 2 * x[k]),
                (li(k), -z2[k])], 0.0)
    n_ohm = net.n_line

    gens_at = [[] for _ in range(net.n_bus)]
    for g, j in enumerate(net.gen_bus):
        gens_at[j].append(g)
    for j in range(net.n_bus):
        terms_p, terms_q = [], []
        for k in np.flatnonzero(net.child == j):
            terms_p += [(pi(k), 1.0), (li(k), -r[k])]
            terms_q += [(qi(k), 1.0), (li(k), -x[k])]
        for k in np.flatnonzero(net.parent == j):
            terms_p.append((pi(k), -1.0))
            terms_q.append((qi(k), -1.0))
        for g in gens_at[j]:
            terms_p.append((L.curtail.start + g, -1.0))
            terms_q.append((L.qgen.start + g, 1.0))
        for i in range(inst.n_cluster):
            terms_p.append((L.flex_index(i, j), -1.0))
        if j == net.slack:
            terms_p.append((L.p_slack, 1.0))
            terms_q.append((L.q_slack, 1.0))
        avail = sum(inst.gen_avail[g] for g in gens_at[j])
        eq.add(terms_p, inst.demand_p[j] - avail)
        eq.add(terms_q, inst.demand_q[j])
    n_balance = net.n_bus

    ineq = _Rows()
    for j in range(net.n_bus):
        if j == net.slack:
            continue
        ineq.add([(vi(j), 1.0)], net.v_max_pu[j] ** 2)
        ineq.add([(vi(j), -1.0)], -net.v_min_pu[j] ** 2)
    for i in range(inst.n_cluster):
        for j in range(net.n_bus):
            col = L.flex_index(i, j)
            ineq.add([(col, 1.0)], inst.flex_ub[i, j])
            ineq.add([(col, -1.0)], 0.0)
    for g in range(net.n_gen):
        ub = inst.gen_avail[g] if net.gen_curtailable[g] else 0.0
        ineq.add([(L.curtail.start + g, 1.0)], max(ub, 0.0))
        ineq.add([(L.curtail.start + g, -1.0)], 0.0)
        ineq.add([(L.qgen.start + g, 1.0)], net.gen_q_max[g])
        ineq.add([(L.qgen.start + g, -1.0)], -net.gen_q_min[g])
    if np.isfinite(net.slack_import_pu):
        ineq.add([(L.p_slack, 1.0)], net.slack_import_pu)
    if np.isfinite(net.slack_export_pu):
        ineq.add([(L.p_slack, -1.0)], net.slack_export_pu)

    soc = _Rows()
    dims = []
    for k in range(net.n_line):
        # ||(2P, 2Q, v - l)|| <= v + l   <=>   v l >= P^2 + Q^2
        vp = vi(net.parent[k])
        soc.add([(vp, -1.0), (li(k), -1.0)], 0.0)
        soc.add([(pi(k), -2.0)], 0.0)
        soc.add([(qi(k), -2.0)], 0.0)
        soc.add([(vp, -1.0), (li(k), 1.0)], 0.0)
        dims.append(4)
    for k in range(net.n_line):
        soc.add([], net.s_max_pu[k])
        soc.add([(pi(k), -1.0)], 0.0)
        soc.add([(qi(k), -1.0)], 0.0)
        dims.append(3)

    blocks = [eq, ineq, soc]
    offset = 0
    rows, cols, vals, rhs = [], [], [], []
    for blk in blocks:
        rows += [offset + rr for rr in blk.rows]
        cols += blk.cols
        vals += blk.vals
        rhs += blk.rhs
        offset += len(blk)
    A = sp.csc_matrix((vals, (rows, cols)), shape=(offset, L.n))

    c = np.zeros(L.n)
    c[L.l] = inst.loss_weight * net.z_abs
    c[L.flex] = np.repeat(inst.pi_flex, net.n_bus)
    c[L.curtail] = inst.pi_curtail
    counts = {"ohm": n_ohm, "balance": n_balance, "relaxation_cones": net.n_line, "thermal_cones": net.n_line}
    return ConicProgram(c, A, np.array(rhs, dtype=float), len(eq), len(ineq), tuple(dims), L, counts)
