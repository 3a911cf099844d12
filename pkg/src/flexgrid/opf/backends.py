"""Conic solver backends.

A backend is constructed fresh for every solve (no re-entrancy is assumed)
and maps a :class:`ConicProgram` to a :class:`RawResult`.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .model import ConicProgram


@dataclass
class RawResult:
    status: str  # optimal | infeasible | numeric_failure
    x: np.ndarray | None
    objective: float
    dual_objective: float
    iterations: int
    detail: str = ""


class ClarabelBackend:
    name = "clarabel"
    defaults = {"tol_gap_abs": 1e-10, "tol_gap_rel": 1e-10, "tol_feas": 1e-10, "max_iter": 200}

    def __init__(self, **settings):
        import clarabel

        self._clarabel = clarabel
        self.settings = {**self.defaults, **settings}

    def solve(self, prog: ConicProgram) -> RawResult:
        cl = self._clarabel
        st = cl.DefaultSettings()
        st.verbose = False
        for key, val in self.settings.items():
            setattr(st, key, val)
        cones = []
        if prog.n_zero:
            cones.append(cl.ZeroConeT(prog.n_zero))
        if prog.n_nonneg:
            cones.append(cl.NonnegativeConeT(prog.n_nonneg))
        cones += [cl.SecondOrderConeT(d) for d in prog.soc_dims]
        n = prog.A.shape[1]
        P = sp.csc_matrix((n, n))
        sol = cl.DefaultSolver(P, prog.c, prog.A, prog.b, cones, st).solve()
        status = str(sol.status)
        if status == "Solved":
            kind = "optimal"
        elif status in ("PrimalInfeasible", "AlmostPrimalInfeasible"):
            kind = "infeasible"
        else:
            kind = "numeric_failure"
        x = np.asarray(sol.x, dtype=float) if kind == "optimal" else None
        return RawResult(kind, x, float(sol.obj_val), float(sol.obj_val_dual), int(sol.iterations), status)


BACKENDS: dict[str, Callable[..., object]] = {"clarabel": ClarabelBackend}


def make_backend(name: str = "clarabel", **settings):
    try:
        factory = BACKENDS[name]
    except KeyError:
        raise ValueError(f"unknown backend {name!r}; available: {sorted(BACKENDS)}") from None
    return factory(**settings)
