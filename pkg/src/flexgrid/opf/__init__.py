"""Convex-relaxed branch-flow OPF."""

from .backends import BACKENDS, ClarabelBackend, RawResult, make_backend
from .model import ConicProgram, Layout, OpfInputError, OpfInstance, assemble_conic, build_instance
from .solution import (
    ExactnessReport,
    OperatingPoint,
    OpfSettings,
    OpfSolution,
    dump_solution,
    exactness_report,
    merit_order,
    objective_parts,
    recover_operating_point,
    residuals,
    solve,
    solve_instance,
)

__all__ = [
    "BACKENDS", "ClarabelBackend", "RawResult", "make_backend", "ConicProgram", "Layout", "OpfInputError",
    "OpfInstance", "assemble_conic", "build_instance", "ExactnessReport", "OperatingPoint", "OpfSettings",
    "OpfSolution", "dump_solution", "exactness_report", "merit_order", "objective_parts",
    "recover_operating_point", "residuals", "solve", "solve_instance",
]
