"""Chance-constrained economic dispatch with flexible line susceptances.

A library and CLI that dispatches generation under Gaussian renewable
uncertainty while co-optimizing the susceptances of series-compensated
lines, using an alternate iteration between a conic generation subproblem
and a trust-region susceptance adjustment.
"""

from .caseio import (
    AlgorithmConfig,
    RawCase,
    ScenarioConfig,
    apply_scenario,
    bundled_path,
    load_case,
    load_scenario,
    parse_matpower,
    parse_scenario,
)
from .ccore import (
    EquivalentLimits,
    MomentProfile,
    equivalent_limits,
    expected_cost,
    moments,
    quantile_factor,
    response_matrix,
)
from .dcflow import NetworkOperator, build_operator, line_flows
from .netmodel import (
    DispatchDecision,
    Generator,
    Grid,
    Line,
    UncertaintyModel,
    incidence_matrix,
)
from .orchestrator import (
    SolveReport,
    StudyResult,
    four_solution_study,
    solve_cced,
    solve_ed,
)
from .socp import ConicProgram, SubproblemSolution, build_gen_subproblem, solve_gen_subproblem
from .validate import ValidationReport, empirical_cost, finite_difference_suite, monte_carlo_validate

__version__ = "0.1.0"

__all__ = [
    "AlgorithmConfig",
    "ConicProgram",
    "DispatchDecision",
    "EquivalentLimits",
    "Generator",
    "Grid",
    "Line",
    "MomentProfile",
    "NetworkOperator",
    "RawCase",
    "ScenarioConfig",
    "SolveReport",
    "StudyResult",
    "SubproblemSolution",
    "UncertaintyModel",
    "ValidationReport",
    "apply_scenario",
    "build_gen_subproblem",
    "build_operator",
    "bundled_path",
    "empirical_cost",
    "equivalent_limits",
    "expected_cost",
    "finite_difference_suite",
    "four_solution_study",
    "incidence_matrix",
    "line_flows",
    "load_case",
    "load_scenario",
    "moments",
    "monte_carlo_validate",
    "parse_matpower",
    "parse_scenario",
    "quantile_factor",
    "response_matrix",
    "solve_cced",
    "solve_ed",
    "solve_gen_subproblem",
]
