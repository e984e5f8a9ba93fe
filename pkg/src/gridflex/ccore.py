"""Chance-constraint core: moments, Gaussian quantiles, equivalent limits, expected cost.

Under the affine response P_g = P_base - alpha (1'u) with u ~ N(0, Sigma),
generations and flows are Gaussian with means given by the base case and
standard deviations linear in the uncertainty. Each two-sided chance
constraint then collapses to a deterministic limit tightened by
c * std, with c the standard-normal quantile at the allowed violation
probability.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr, ndtri

from .dcflow import NetworkOperator, line_flows
from .errors import DomainError, InfeasibleMargin, NotNormalized
from .netmodel import ALPHA_SUM_TOL, DispatchDecision, Grid, UncertaintyModel


def quantile_factor(epsilon: float) -> float:
    """Standard-normal quantile c = Phi^-1(1 - epsilon) for epsilon in (0, 0.5)."""
    if not 0.0 < epsilon <= 0.5:
        raise DomainError(f"epsilon must be in (0, 0.5], got {epsilon}")
    return float(ndtri(1.0 - epsilon))


def epsilon_for_quantile(c: float) -> float:
    """Inverse of quantile_factor: the violation probability giving factor c."""
    if c < 0:
        raise DomainError(f"quantile factor must be >= 0, got {c}")
    return float(1.0 - ndtr(c))


def constraint_quantiles(grid: Grid) -> tuple[np.ndarray, np.ndarray]:
    """Per-generator and per-line quantile factors from the stored epsilons."""
    c_gen = np.array([quantile_factor(g.epsilon) for g in grid.generators])
    c_line = np.array([quantile_factor(ln.epsilon) for ln in grid.lines])
    return c_gen, c_line


def response_matrix(alpha: np.ndarray) -> np.ndarray:
    """Affine response T_g = I - alpha 1'. Columns sum to zero when 1'alpha = 1."""
    alpha = np.asarray(alpha, dtype=float)
    if abs(alpha.sum() - 1.0) > ALPHA_SUM_TOL:
        raise NotNormalized(f"participation factors sum to {alpha.sum():.12g}")
    n = alpha.shape[0]
    return np.eye(n) - np.outer(alpha, np.ones(n))


@dataclass(frozen=True)
class MomentProfile:
    """First and second moments of generations and flows at a fixed decision."""

    s_sigma: float
    gen_std: np.ndarray  # per generator, = alpha_i * s_sigma
    flow_mean: np.ndarray  # per line, base-case flow
    flow_std: np.ndarray  # per line
    response: np.ndarray  # T_g(alpha), n x n


def moments(
    op: NetworkOperator,
    grid: Grid,
    decision: DispatchDecision,
    uncertainty: UncertaintyModel,
) -> MomentProfile:
    """Means and standard deviations of generations and line flows.

    flow_std_ij is the 2-norm of T_f_ij T_g sqrt(Sigma) with the symmetric
    PSD square root; gen_std_i = alpha_i * s_sigma.
    """
    injection = decision.p_base + grid.renewable_forecast - grid.load
    flow_mean = line_flows(op, injection)
    T_g = response_matrix(decision.alpha)
    s = uncertainty.total_std
    gen_std = decision.alpha[grid.dispatchable_buses] * s
    if uncertainty.is_zero:
        flow_std = np.zeros(grid.n_lines)
    else:
        spread = (op.ptdf @ T_g) @ uncertainty.sqrt_covariance
        flow_std = np.linalg.norm(spread, axis=1)
    return MomentProfile(s_sigma=s, gen_std=gen_std, flow_mean=flow_mean, flow_std=flow_std, response=T_g)


@dataclass(frozen=True)
class EquivalentLimits:
    """Physical limits shrunk by the uncertainty margins."""

    gen_emax: np.ndarray
    gen_emin: np.ndarray
    flow_emax: np.ndarray
    c_gen: np.ndarray
    c_line: np.ndarray


def equivalent_limits(
    profile: MomentProfile,
    grid: Grid,
    c_gen: np.ndarray | None = None,
    c_line: np.ndarray | None = None,
) -> EquivalentLimits:
    """Equivalent generation limits and line capacities at the given moments.

    Raises InfeasibleMargin when an uncertainty margin exceeds the physical
    capability (negative equivalent capacity or crossed generation box).
    """
    if c_gen is None or c_line is None:
        cg, cl = constraint_quantiles(grid)
        c_gen = cg if c_gen is None else np.asarray(c_gen, dtype=float)
        c_line = cl if c_line is None else np.asarray(c_line, dtype=float)
    p_max = np.array([g.p_max for g in grid.generators])
    p_min = np.array([g.p_min for g in grid.generators])
    gen_margin = c_gen * profile.gen_std
    gen_emax = p_max - gen_margin
    gen_emin = p_min + gen_margin
    flow_emax = grid.line_capacity - c_line * profile.flow_std
    if np.any(flow_emax < 0):
        k = int(np.argmin(flow_emax))
        raise InfeasibleMargin(
            f"uncertainty margin exceeds capacity of line {grid.external_pair(k)}: "
            f"equivalent limit {flow_emax[k]:.4g} p.u."
        )
    if np.any(gen_emax < gen_emin):
        i = int(np.argmin(gen_emax - gen_emin))
        raise InfeasibleMargin(f"equivalent generation box empty for generator at bus index {grid.generators[i].bus}")
    return EquivalentLimits(gen_emax=gen_emax, gen_emin=gen_emin, flow_emax=flow_emax, c_gen=c_gen, c_line=c_line)


def expected_cost(decision: DispatchDecision, grid: Grid, s_sigma: float) -> float:
    """Expected generation cost in $/h.

    Analytic form: quadratic-plus-linear cost of the base dispatch plus the
    variance penalty s^2 alpha' a2 alpha contributed by the affine response.
    Evaluated in the per-unit cost convention (see Generator).
    """
    gens = grid.dispatchable_buses
    p = decision.p_base[gens]
    a = decision.alpha[gens]
    a2 = np.array([g.cost_quadratic for g in grid.generators])
    a1 = np.array([g.cost_linear for g in grid.generators])
    return float(grid.base_mva * (p @ (a2 * p) + a1 @ p + s_sigma**2 * (a @ (a2 * a))))
