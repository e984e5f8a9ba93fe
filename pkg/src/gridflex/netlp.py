"""Susceptance sensitivities and the trust-region adjustment LP.

The cost sensitivity to a flexible susceptance combines, per congested
line, the derivative of the base-case flow and the derivative of the
equivalent capacity, weighted by the line's dual variable. The resulting
linear model is minimized over a box (susceptance bounds intersected with
the trust region), which is separable and solved in closed form per line.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ccore import MomentProfile
from .dcflow import NetworkOperator, d_baseflow_db, d_ptdf_row_db
from .errors import DegenerateStd
from .netmodel import Grid, UncertaintyModel
from .socp import SubproblemSolution

STD_FLOOR = 1e-9


def flow_limit_sensitivity(
    op: NetworkOperator,
    profile: MomentProfile,
    uncertainty: UncertaintyModel,
    c_line_k: float,
    row_line: int,
    wrt_line: int,
) -> float:
    """d f_emax(row_line) / d b(wrt_line) at the current decision.

    Raises DegenerateStd when the flow std sits at its floor (zero
    uncertainty margin); the correct contribution is then zero and the
    caller applies it.
    """
    std = profile.flow_std[row_line]
    if std <= STD_FLOOR:
        raise DegenerateStd(f"flow std of line {row_line} at floor; sensitivity undefined")
    dT = d_ptdf_row_db(op, row_line, wrt_line)
    T_row = op.ptdf[row_line]
    core = profile.response @ uncertainty.covariance @ profile.response.T @ T_row
    return float(-(dT @ core) * c_line_k / std)


@dataclass(frozen=True)
class SensitivityBundle:
    """Derivatives needed by the susceptance LP, keyed (congested, flexible).

    ``d_cost`` maps flexible-line index -> dh/db; it is assembled exactly
    from the duals over the binding sets, so it is identically zero when
    no line is congested.
    """

    d_femax: dict[tuple[int, int], float]
    d_fbar: dict[tuple[int, int], float]
    d_cost: dict[int, float]


def cost_sensitivity(
    op: NetworkOperator,
    grid: Grid,
    uncertainty: UncertaintyModel,
    profile: MomentProfile,
    c_line: np.ndarray,
    solution: SubproblemSolution,
) -> SensitivityBundle:
    """Assemble dh/db over flexible lines from the binding-set duals.

    dh/db_km = sum_plus  lam+ (dfbar/db - dfemax/db)
             - sum_minus lam- (dfbar/db + dfemax/db)
    """
    injection = grid.scatter_generation(solution.p_base) + grid.renewable_forecast - grid.load
    congested = sorted(solution.binding_plus | solution.binding_minus)
    flexible = [int(k) for k in grid.flexible_line_indices]
    d_femax: dict[tuple[int, int], float] = {}
    d_fbar: dict[tuple[int, int], float] = {}
    d_cost: dict[int, float] = {km: 0.0 for km in flexible}
    for ij in congested:
        for km in flexible:
            dfb = d_baseflow_db(op, injection, ij, km)
            try:
                dfe = flow_limit_sensitivity(op, profile, uncertainty, c_line[ij], ij, km)
            except DegenerateStd:
                dfe = 0.0
            d_fbar[(ij, km)] = dfb
            d_femax[(ij, km)] = dfe
            if ij in solution.binding_plus:
                d_cost[km] += solution.lambda_plus[ij] * (dfb - dfe)
            if ij in solution.binding_minus:
                d_cost[km] -= solution.lambda_minus[ij] * (dfb + dfe)
    return SensitivityBundle(d_femax=d_femax, d_fbar=d_fbar, d_cost=d_cost)


def cost_sensitivity_full(
    op: NetworkOperator,
    grid: Grid,
    uncertainty: UncertaintyModel,
    profile: MomentProfile,
    c_line: np.ndarray,
    solution: SubproblemSolution,
) -> dict[int, float]:
    """dh/db evaluated with the sums running over every line.

    Zero-dual lines contribute nothing, so this must agree with the
    binding-set form; it exists as the cross-check of that simplification.
    """
    injection = grid.scatter_generation(solution.p_base) + grid.renewable_forecast - grid.load
    flexible = [int(k) for k in grid.flexible_line_indices]
    out: dict[int, float] = {}
    for km in flexible:
        total = 0.0
        for ij in range(grid.n_lines):
            lam_p = solution.lambda_plus[ij]
            lam_m = solution.lambda_minus[ij]
            if lam_p == 0.0 and lam_m == 0.0:
                continue
            dfb = d_baseflow_db(op, injection, ij, km)
            try:
                dfe = flow_limit_sensitivity(op, profile, uncertainty, c_line[ij], ij, km)
            except DegenerateStd:
                dfe = 0.0
            total += lam_p * (dfb - dfe) - lam_m * (dfb + dfe)
        out[km] = total
    return out


def solve_susceptance_lp(
    d_cost: dict[int, float],
    b_current: np.ndarray,
    b_min: np.ndarray,
    b_max: np.ndarray,
    delta_b_max: np.ndarray,
) -> np.ndarray:
    """Minimize sum dh/db * delta over the per-line feasible intervals.

    Separable LP: each line independently goes to the feasible extreme
    opposite its gradient sign, and stays put on zero gradient. Lines
    absent from ``d_cost`` (non-flexible) get zero adjustment.
    """
    delta = np.zeros_like(b_current)
    for km, g in d_cost.items():
        lo = max(b_min[km] - b_current[km], -delta_b_max[km])
        hi = min(b_max[km] - b_current[km], delta_b_max[km])
        if g > 0:
            delta[km] = lo
        elif g < 0:
            delta[km] = hi
    return delta
