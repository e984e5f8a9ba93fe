"""Alternate-iteration solver: SOCP over generations, LP over susceptances.

Starting from rated susceptances, each outer iteration assembles the cost
gradient with respect to the flexible susceptances from the line duals of
the latest generation subproblem, takes a trust-region LP step, and
re-solves the generation subproblem at the adjusted network. Steps that
increase cost are rejected and retried with a beta-shrunk trust region;
accepted steps restore it. The run stops as soon as congestion clears, or
when the accepted adjustment falls below the convergence threshold.
Every accepted iterate is itself a feasible dispatch, so truncated runs
remain deployable.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass

import numpy as np

from .caseio import AlgorithmConfig
from .ccore import constraint_quantiles, moments
from .dcflow import build_operator
from .netlp import cost_sensitivity, solve_susceptance_lp
from .netmodel import DispatchDecision, Grid, UncertaintyModel
from .socp import SubproblemSolution, build_gen_subproblem, solve_gen_subproblem

_log = logging.getLogger(__name__)

NO_CONGESTION_INITIAL = "no-congestion-initial"
CONGESTION_CLEARED = "congestion-cleared"
CONVERGED_MATCHED = "converged-matched"
ITERATION_CAP = "iteration-cap"


@dataclass(frozen=True)
class IterationRecord:
    """One accepted point of the trajectory (index 0 is the rated-b solve)."""

    index: int
    cost: float
    p_base: np.ndarray  # generator order, p.u.
    alpha: np.ndarray
    lambda_plus: np.ndarray
    lambda_minus: np.ndarray
    b: np.ndarray
    delta_b: np.ndarray
    trust_region: np.ndarray
    accepted: bool
    shrink_count: int


@dataclass(frozen=True)
class SolveReport:
    termination: str
    decision: DispatchDecision
    solution: SubproblemSolution
    trajectory: list[IterationRecord]
    wall_time: float

    @property
    def cost(self) -> float:
        return self.solution.objective

    @property
    def initial_cost(self) -> float:
        return self.trajectory[0].cost

    @property
    def accepted_iterations(self) -> int:
        return self.trajectory[-1].index


def solve_cced(
    grid: Grid,
    uncertainty: UncertaintyModel,
    config: AlgorithmConfig | None = None,
    backend=None,
) -> SolveReport:
    """Solve the dispatch problem with flexible susceptances.

    Returns the full iteration trajectory; raises InfeasibleProblem if the
    initial generation subproblem already has no feasible point.
    """
    config = config or AlgorithmConfig()
    t0 = time.perf_counter()
    c_gen, c_line = constraint_quantiles(grid)
    b = grid.rated_susceptance.copy()
    b_lo, b_hi = grid.susceptance_bounds
    flex = grid.flexible_line_indices
    trust_base = np.zeros(grid.n_lines)
    trust_base[flex] = config.trust_region_frac * grid.rated_susceptance[flex]

    def solve_at(b_vec):
        op = build_operator(grid, b_vec)
        program = build_gen_subproblem(grid, uncertainty, op, c_gen, c_line)
        sol = solve_gen_subproblem(
            program,
            backend=backend,
            tolerance=config.socp_tolerance,
            dual_binding_tol=config.dual_binding_tol,
            primal_tol=config.primal_tol,
        )
        return op, sol

    op, sol = solve_at(b)
    trajectory = [_record(0, sol, b, np.zeros(grid.n_lines), trust_base, 0)]

    def report(termination):
        return SolveReport(
            termination=termination,
            decision=sol.decision(grid, b),
            solution=sol,
            trajectory=trajectory,
            wall_time=time.perf_counter() - t0,
        )

    if not (sol.binding_plus | sol.binding_minus):
        return report(NO_CONGESTION_INITIAL)
    if flex.size == 0:
        return report(CONVERGED_MATCHED)

    trust = trust_base.copy()
    for index in range(1, config.max_outer_iterations + 1):
        profile = moments(op, grid, sol.decision(grid, b), uncertainty)
        bundle = cost_sensitivity(op, grid, uncertainty, profile, c_line, sol)
        accepted = False
        for shrink in range(config.max_shrink_per_iteration + 1):
            delta_b = solve_susceptance_lp(bundle.d_cost, b, b_lo, b_hi, trust)
            op_try, sol_try = solve_at(b + delta_b)
            cleared = not (sol_try.binding_plus | sol_try.binding_minus)
            if cleared or sol_try.objective <= sol.objective:
                if sol_try.objective >= sol.objective and not cleared:
                    _log.warning("iteration %d accepted with no cost progress", index)
                b = b + delta_b
                op, sol = op_try, sol_try
                trajectory.append(_record(index, sol, b, delta_b, trust, shrink))
                trust = trust_base.copy()
                accepted = True
                if cleared:
                    return report(CONGESTION_CLEARED)
                if np.abs(delta_b[flex]).max() < config.delta:
                    return report(CONVERGED_MATCHED)
                break
            trust = config.beta * trust
        if not accepted:
            # trust region shrunk to nothing without progress
            return report(CONVERGED_MATCHED)
    return report(ITERATION_CAP)


def _record(index, sol, b, delta_b, trust, shrink_count) -> IterationRecord:
    return IterationRecord(
        index=index,
        cost=sol.objective,
        p_base=sol.p_base.copy(),
        alpha=sol.alpha.copy(),
        lambda_plus=sol.lambda_plus.copy(),
        lambda_minus=sol.lambda_minus.copy(),
        b=b.copy(),
        delta_b=np.asarray(delta_b, dtype=float).copy(),
        trust_region=trust.copy(),
        accepted=True,
        shrink_count=shrink_count,
    )


def solve_ed(grid: Grid, config: AlgorithmConfig | None = None, backend=None) -> SolveReport:
    """Deterministic dispatch: the same pipeline with zero covariance."""
    return solve_cced(grid, UncertaintyModel.zero(grid.n_buses), config, backend=backend)


@dataclass(frozen=True)
class StudyResult:
    """Costs of the four reference solutions and their decompositions.

    S1: flexible network, with uncertainty (final iterate).
    S2: rigid network, with uncertainty (iteration 0 of the S1 run).
    S3: flexible network, deterministic (final iterate).
    S4: rigid network, deterministic (iteration 0 of the S3 run).
    """

    cced_report: SolveReport
    ed_report: SolveReport

    @property
    def s1(self) -> float:
        return self.cced_report.cost

    @property
    def s2(self) -> float:
        return self.cced_report.initial_cost

    @property
    def s3(self) -> float:
        return self.ed_report.cost

    @property
    def s4(self) -> float:
        return self.ed_report.initial_cost

    @property
    def cost_of_uncertainty_flexible(self) -> float:
        return self.s1 - self.s3

    @property
    def cost_of_uncertainty_rigid(self) -> float:
        return self.s2 - self.s4

    @property
    def cost_of_rigidity_uncertain(self) -> float:
        return self.s2 - self.s1

    @property
    def cost_of_rigidity_deterministic(self) -> float:
        return self.s4 - self.s3


def four_solution_study(
    grid: Grid,
    uncertainty: UncertaintyModel,
    config: AlgorithmConfig | None = None,
    backend=None,
) -> StudyResult:
    """Run the flexible dispatch with and without uncertainty.

    The rigid-network solutions S2/S4 are the iteration-0 records of the
    corresponding runs, so the whole comparison costs two solves.
    """
    cced = solve_cced(grid, uncertainty, config, backend=backend)
    ed = solve_ed(grid, config, backend=backend)
    return StudyResult(cced_report=cced, ed_report=ed)
