"""Generation/participation-factor subproblem: build, solve, extract line duals.

The subproblem fixes the susceptance vector and minimizes expected cost
over base generations and participation factors. With Gaussian
uncertainty each line-flow chance constraint is a second-order cone row

    a'x + ||F x + g|| <= d

whose norm argument is affine in the participation factors. The program
is kept solver-agnostic; a cvxpy backend is bundled. Line-flow dual
variables are contractual output: the susceptance subproblem consumes
them.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol

import numpy as np

from .ccore import constraint_quantiles
from .dcflow import NetworkOperator
from .errors import InfeasibleProblem, NumericalLimit
from .netmodel import DispatchDecision, Grid, UncertaintyModel

DUAL_BINDING_TOL = 1e-5
PRIMAL_TOL = 1e-6
SOCP_TOLERANCE = 1e-8


@dataclass(frozen=True)
class ConeRow:
    """One inequality a'x + ||F x + g|| <= d; linear when F is None."""

    a: np.ndarray
    d: float
    F: np.ndarray | None = None
    g: np.ndarray | None = None
    label: tuple = ()

    def margin(self, x: np.ndarray) -> float:
        """Slack d - (a'x + ||F x + g||); negative means violated."""
        lhs = float(self.a @ x)
        if self.F is not None:
            lhs += float(np.linalg.norm(self.F @ x + self.g))
        return self.d - lhs


@dataclass(frozen=True)
class ConicProgram:
    """min x' diag(q_quad) x + q_lin' x  s.t.  eq_a x = eq_b and the cone rows."""

    n_var: int
    q_quad: np.ndarray
    q_lin: np.ndarray
    eq_a: np.ndarray
    eq_b: np.ndarray
    rows: tuple[ConeRow, ...]
    n_flow_lines: int = 0

    def objective(self, x: np.ndarray) -> float:
        return float(x @ (self.q_quad * x) + self.q_lin @ x)

    def max_violation(self, x: np.ndarray) -> float:
        """Largest constraint violation at x (0 when feasible)."""
        v = float(np.abs(self.eq_a @ x - self.eq_b).max()) if self.eq_b.size else 0.0
        for row in self.rows:
            v = max(v, -row.margin(x))
        return v


@dataclass(frozen=True)
class RawSolution:
    status: str  # "optimal" | "infeasible" | "numerical-limit"
    x: np.ndarray | None = None
    objective: float | None = None
    row_duals: np.ndarray | None = None
    eq_duals: np.ndarray | None = None


class SolverBackend(Protocol):
    def solve(self, program: ConicProgram, tolerance: float) -> RawSolution: ...


class CvxpyBackend:
    """Bundled conic backend on top of cvxpy.

    Scalar dual variables of the cone rows are recovered from cvxpy's
    constraint duals; they equal the Lagrange multipliers of the rows in
    the written form.
    """

    def __init__(self, solver: str | None = None):
        import cvxpy as cp

        self._cp = cp
        if solver is None:
            solver = "CLARABEL" if "CLARABEL" in cp.installed_solvers() else "SCS"
        self.solver = solver

    def solve(self, program: ConicProgram, tolerance: float = SOCP_TOLERANCE) -> RawSolution:
        cp = self._cp
        x = cp.Variable(program.n_var)
        cons = []
        if program.eq_b.size:
            cons.append(program.eq_a @ x == program.eq_b)
        for row in program.rows:
            if row.F is None:
                cons.append(row.a @ x <= row.d)
            else:
                cons.append(row.a @ x + cp.norm(row.F @ x + row.g) <= row.d)
        obj = program.q_lin @ x
        if np.any(program.q_quad):
            obj = obj + cp.sum(cp.multiply(program.q_quad, cp.square(x)))
        problem = cp.Problem(cp.Minimize(obj), cons)
        kwargs = {}
        if self.solver == "CLARABEL":
            kwargs = {"tol_gap_rel": tolerance, "tol_feas": tolerance}
        elif self.solver == "SCS":
            kwargs = {"eps": tolerance}
        try:
            problem.solve(solver=self.solver, **kwargs)
        except cp.SolverError:
            return RawSolution(status="numerical-limit")
        if problem.status in (cp.INFEASIBLE, cp.INFEASIBLE_INACCURATE):
            return RawSolution(status="infeasible")
        if problem.status != cp.OPTIMAL:
            return RawSolution(status="numerical-limit")
        offset = 1 if program.eq_b.size else 0
        row_duals = np.array([float(np.atleast_1d(c.dual_value)[0]) for c in cons[offset:]])
        eq_duals = np.atleast_1d(cons[0].dual_value).astype(float) if offset else np.zeros(0)
        return RawSolution(
            status="optimal",
            x=np.asarray(x.value, dtype=float),
            objective=float(problem.value),
            row_duals=row_duals,
            eq_duals=eq_duals,
        )


_default_backend: SolverBackend | None = None


def default_backend() -> SolverBackend:
    global _default_backend
    if _default_backend is None:
        _default_backend = CvxpyBackend()
    return _default_backend


def build_gen_subproblem(
    grid: Grid,
    uncertainty: UncertaintyModel,
    op: NetworkOperator,
    c_gen: np.ndarray | None = None,
    c_line: np.ndarray | None = None,
) -> ConicProgram:
    """Conic program over (base generations, participation factors) at fixed b.

    Variable layout: x = [P_g (n_g), alpha_g (n_g)] in generator order,
    per-unit. Flow rows carry labels ("flow+", k) / ("flow-", k); the
    generation boxes ("pmax", i) / ("pmin", i).
    """
    n_g = len(grid.generators)
    if n_g == 0:
        raise ValueError("no dispatchable generators: participation constraint unsatisfiable")
    if c_gen is None or c_line is None:
        cg, cl = constraint_quantiles(grid)
        c_gen = cg if c_gen is None else np.asarray(c_gen, dtype=float)
        c_line = cl if c_line is None else np.asarray(c_line, dtype=float)
    gens = grid.dispatchable_buses
    s = uncertainty.total_std
    base = grid.base_mva
    a2 = np.array([g.cost_quadratic for g in grid.generators])
    a1 = np.array([g.cost_linear for g in grid.generators])
    n_var = 2 * n_g

    q_quad = base * np.concatenate([a2, s**2 * a2])
    q_lin = base * np.concatenate([a1, np.zeros(n_g)])

    # balance 1'P = net load; participation 1'alpha = 1
    net_load = grid.load - grid.renewable_forecast
    eq_a = np.zeros((2, n_var))
    eq_a[0, :n_g] = 1.0
    eq_a[1, n_g:] = 1.0
    eq_b = np.array([net_load.sum(), 1.0])

    rows: list[ConeRow] = []
    for i, g in enumerate(grid.generators):
        a = np.zeros(n_var)
        a[i] = 1.0
        a[n_g + i] = c_gen[i] * s
        rows.append(ConeRow(a=a, d=g.p_max, label=("pmax", i)))
        a = np.zeros(n_var)
        a[i] = -1.0
        a[n_g + i] = c_gen[i] * s
        rows.append(ConeRow(a=a, d=-g.p_min, label=("pmin", i)))
        # participation factors are balancing shares: alpha >= 0. Without
        # this, a negative alpha would widen the generation box beyond the
        # physical limits (the margin alpha*s enters the box signed).
        a = np.zeros(n_var)
        a[n_g + i] = -1.0
        rows.append(ConeRow(a=a, d=0.0, label=("alpha+", i)))

    A_gen = op.ptdf[:, gens]  # flow response to generator injections
    t0 = op.ptdf @ net_load  # flow pulled by loads net of renewables
    L = uncertainty.reduced_factor  # n x r, L L' = Sigma
    s_red = L.sum(axis=0)  # 1'L
    fmax = grid.line_capacity
    for k in range(grid.n_lines):
        if not np.isfinite(fmax[k]):
            continue  # unlimited line: constraint can never bind
        F = g_vec = None
        if L.shape[1]:
            # c * T_f_k T_g(alpha) L, affine in alpha
            w = op.ptdf[k] @ L
            F = np.zeros((L.shape[1], n_var))
            F[:, n_g:] = -np.outer(s_red, op.ptdf[k, gens])
            F = c_line[k] * F
            g_vec = c_line[k] * w
        rows.append(ConeRow(a=_flow_a(A_gen[k], n_var, +1), d=fmax[k] + t0[k], F=F, g=g_vec, label=("flow+", k)))
        rows.append(ConeRow(a=_flow_a(A_gen[k], n_var, -1), d=fmax[k] - t0[k], F=F, g=g_vec, label=("flow-", k)))
    return ConicProgram(
        n_var=n_var, q_quad=q_quad, q_lin=q_lin, eq_a=eq_a, eq_b=eq_b, rows=tuple(rows), n_flow_lines=grid.n_lines
    )


def _flow_a(a_gen_row: np.ndarray, n_var: int, sign: int) -> np.ndarray:
    a = np.zeros(n_var)
    a[: a_gen_row.shape[0]] = sign * a_gen_row
    return a


@dataclass(frozen=True)
class SubproblemSolution:
    """Optimal point of the generation subproblem plus line-flow duals.

    ``lambda_plus``/``lambda_minus`` follow the KKT zero pattern: entries
    off the binding sets are stored as exact zeros. ``slack_plus``/
    ``slack_minus`` are the per-line slacks of the forward/backward flow
    rows at the optimum.
    """

    p_base: np.ndarray  # per generator, p.u.
    alpha: np.ndarray  # per generator
    objective: float
    lambda_plus: np.ndarray
    lambda_minus: np.ndarray
    slack_plus: np.ndarray
    slack_minus: np.ndarray
    binding_plus: frozenset[int]
    binding_minus: frozenset[int]
    solver_status: str

    def decision(self, grid: Grid, b: np.ndarray) -> DispatchDecision:
        return DispatchDecision(
            p_base=grid.scatter_generation(self.p_base),
            alpha=grid.scatter_generation(self.alpha),
            susceptance=np.asarray(b, dtype=float),
        )


def solve_gen_subproblem(
    program: ConicProgram,
    backend: SolverBackend | None = None,
    tolerance: float = SOCP_TOLERANCE,
    dual_binding_tol: float = DUAL_BINDING_TOL,
    primal_tol: float = PRIMAL_TOL,
) -> SubproblemSolution:
    """Solve the subproblem and derive the binding line sets.

    Raises InfeasibleProblem when the margins exceed network capability and
    NumericalLimit when the backend stops early.
    """
    backend = backend or default_backend()
    raw = backend.solve(program, tolerance)
    if raw.status == "infeasible":
        raise InfeasibleProblem("generation subproblem infeasible: uncertainty margins exceed network capability")
    if raw.status != "optimal":
        raise NumericalLimit(f"conic backend stopped with status {raw.status!r}")
    n_g = program.n_var // 2
    x = raw.x
    n_lines = program.n_flow_lines
    lam_p = np.zeros(n_lines)
    lam_m = np.zeros(n_lines)
    slack_p = np.full(n_lines, np.inf)
    slack_m = np.full(n_lines, np.inf)
    for row, dual in zip(program.rows, raw.row_duals):
        kind, k = row.label
        if kind == "flow+":
            lam_p[k], slack_p[k] = max(dual, 0.0), row.margin(x)
        elif kind == "flow-":
            lam_m[k], slack_m[k] = max(dual, 0.0), row.margin(x)
    bind_p = frozenset(np.flatnonzero((lam_p > dual_binding_tol) & (slack_p < primal_tol)).tolist())
    bind_m = frozenset(np.flatnonzero((lam_m > dual_binding_tol) & (slack_m < primal_tol)).tolist())
    # enforce the KKT zero pattern: duals vanish off the binding sets
    lam_p[[k for k in range(n_lines) if k not in bind_p]] = 0.0
    lam_m[[k for k in range(n_lines) if k not in bind_m]] = 0.0
    return SubproblemSolution(
        p_base=x[:n_g].copy(),
        alpha=x[n_g:].copy(),
        objective=program.objective(x),
        lambda_plus=lam_p,
        lambda_minus=lam_m,
        slack_plus=slack_p,
        slack_minus=slack_m,
        binding_plus=bind_p,
        binding_minus=bind_m,
        solver_status="optimal",
    )


def binding_sets(
    solution: SubproblemSolution,
    primal_tol: float = PRIMAL_TOL,
    dual_tol: float = DUAL_BINDING_TOL,
) -> tuple[frozenset[int], frozenset[int]]:
    """Re-derive the binding line sets from stored duals and slacks."""
    plus = frozenset(
        int(k)
        for k in np.flatnonzero((solution.lambda_plus > dual_tol) & (solution.slack_plus < primal_tol))
    )
    minus = frozenset(
        int(k)
        for k in np.flatnonzero((solution.lambda_minus > dual_tol) & (solution.slack_minus < primal_tol))
    )
    return plus, minus
