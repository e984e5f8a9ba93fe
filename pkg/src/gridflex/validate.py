"""Independent verification: Monte Carlo sampling and finite-difference checks.

Monte Carlo draws renewable deviations through the symmetric covariance
root with a seeded generator, propagates them through the affine response
and the PTDF, and counts physical-limit violations per constraint. Work
is split into fixed-size batches, each owning its own seeded substream,
so totals are identical whether batches run serially or on a pool.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .ccore import constraint_quantiles, moments
from .dcflow import build_operator, d_baseflow_db, d_pseudoinverse_db, d_ptdf_row_db
from .errors import DegenerateStd
from .netlp import flow_limit_sensitivity
from .netmodel import DispatchDecision, Grid, UncertaintyModel

BATCH_SIZE = 20_000
WILSON_Z99 = 2.5758293035489004  # two-sided 99%


def _worker_count() -> int:
    raw = os.environ.get("GRIDFLEX_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def wilson_interval(count: int, n: int, z: float = WILSON_Z99) -> tuple[float, float]:
    """Wilson score interval for a binomial proportion."""
    if n == 0:
        return 0.0, 1.0
    p = count / n
    denom = 1.0 + z**2 / n
    center = (p + z**2 / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z**2 / (4 * n**2)) / denom
    return max(center - half, 0.0), min(center + half, 1.0)


@dataclass(frozen=True)
class ConstraintCheck:
    """Empirical violation statistics of one physical constraint."""

    kind: str  # "gen-max" | "gen-min" | "flow-max" | "flow-min"
    element: tuple  # external bus number, or external (from, to) pair
    epsilon: float
    violations: int
    samples: int

    @property
    def rate(self) -> float:
        return self.violations / self.samples

    @property
    def wilson_99(self) -> tuple[float, float]:
        return wilson_interval(self.violations, self.samples)

    @property
    def within_band(self) -> bool:
        """True when the rate does not exceed epsilon beyond a 3-sigma Wilson band."""
        lower, _ = wilson_interval(self.violations, self.samples, z=3.0)
        return lower <= self.epsilon


@dataclass(frozen=True)
class ValidationReport:
    checks: list[ConstraintCheck]
    cost_mean: float
    cost_ci99: float
    samples: int
    seed: int

    @property
    def all_within_band(self) -> bool:
        return all(c.within_band for c in self.checks)

    def worst(self) -> ConstraintCheck:
        return max(self.checks, key=lambda c: c.rate - c.epsilon)


def _batch_seeds(seed: int, n_batches: int) -> list[np.random.SeedSequence]:
    return np.random.SeedSequence(seed).spawn(n_batches)


def monte_carlo_validate(
    grid: Grid,
    uncertainty: UncertaintyModel,
    decision: DispatchDecision,
    n_samples: int,
    seed: int = 0,
) -> ValidationReport:
    """Estimate per-constraint violation rates of a dispatch under sampling.

    Deterministic for a fixed seed; the worker count (GRIDFLEX_THREADS)
    changes scheduling only, never totals.
    """
    if n_samples < 1000:
        raise ValueError("need at least 1000 samples for meaningful rates")
    op = build_operator(grid, decision.susceptance)
    injection = decision.p_base + grid.renewable_forecast - grid.load
    flow_base = op.ptdf @ injection
    spread = op.ptdf @ _response(decision)  # maps u to flow deviations
    root = uncertainty.sqrt_covariance
    gens = grid.dispatchable_buses
    p_base = decision.p_base[gens]
    alpha = decision.alpha[gens]
    p_max = np.array([g.p_max for g in grid.generators])
    p_min = np.array([g.p_min for g in grid.generators])
    f_max = grid.line_capacity
    a2 = np.array([g.cost_quadratic for g in grid.generators])
    a1 = np.array([g.cost_linear for g in grid.generators])
    base = grid.base_mva

    sizes = [BATCH_SIZE] * (n_samples // BATCH_SIZE)
    if n_samples % BATCH_SIZE:
        sizes.append(n_samples % BATCH_SIZE)
    seeds = _batch_seeds(seed, len(sizes))

    def run_batch(args):
        size, seq = args
        rng = np.random.default_rng(seq)
        z = rng.standard_normal((size, grid.n_buses))
        u = z @ root  # rows ~ N(0, Sigma); root is symmetric
        total = u.sum(axis=1)
        p = p_base[None, :] - np.outer(total, alpha)
        f = flow_base[None, :] + u @ spread.T
        counts = {
            "gen-max": (p > p_max[None, :]).sum(axis=0),
            "gen-min": (p < p_min[None, :]).sum(axis=0),
            "flow-max": (f > f_max[None, :]).sum(axis=0),
            "flow-min": (f < -f_max[None, :]).sum(axis=0),
        }
        cost = base * ((p**2 @ a2) + p @ a1)
        return counts, cost.sum(), (cost**2).sum()

    workers = _worker_count()
    jobs = list(zip(sizes, seeds))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run_batch, jobs))
    else:
        results = [run_batch(j) for j in jobs]

    totals = {k: np.zeros(len(v), dtype=np.int64) for k, v in results[0][0].items()}
    cost_sum = 0.0
    cost_sq = 0.0
    for counts, cs, cq in results:
        for k in totals:
            totals[k] += counts[k]
        cost_sum += cs
        cost_sq += cq
    mean = cost_sum / n_samples
    var = max(cost_sq / n_samples - mean**2, 0.0)
    ci99 = WILSON_Z99 * math.sqrt(var / n_samples)

    checks = []
    for i, g in enumerate(grid.generators):
        bus = grid.bus_numbers[g.bus]
        checks.append(ConstraintCheck("gen-max", (bus,), g.epsilon, int(totals["gen-max"][i]), n_samples))
        checks.append(ConstraintCheck("gen-min", (bus,), g.epsilon, int(totals["gen-min"][i]), n_samples))
    for k, ln in enumerate(grid.lines):
        if not np.isfinite(ln.capacity):
            continue
        pair = grid.external_pair(k)
        checks.append(ConstraintCheck("flow-max", pair, ln.epsilon, int(totals["flow-max"][k]), n_samples))
        checks.append(ConstraintCheck("flow-min", pair, ln.epsilon, int(totals["flow-min"][k]), n_samples))
    return ValidationReport(checks=checks, cost_mean=mean, cost_ci99=ci99, samples=n_samples, seed=seed)


def _response(decision: DispatchDecision) -> np.ndarray:
    n = decision.alpha.shape[0]
    return np.eye(n) - np.outer(decision.alpha, np.ones(n))


def empirical_cost(
    grid: Grid,
    uncertainty: UncertaintyModel,
    decision: DispatchDecision,
    n_samples: int,
    seed: int = 0,
) -> tuple[float, float]:
    """Sample mean of the random generation cost, with a 99% CI half-width.

    Only the total renewable deviation enters the cost, so each sample is a
    single Gaussian scalar; this stays cheap at millions of draws.
    """
    gens = grid.dispatchable_buses
    p_base = decision.p_base[gens]
    alpha = decision.alpha[gens]
    a2 = np.array([g.cost_quadratic for g in grid.generators])
    a1 = np.array([g.cost_linear for g in grid.generators])
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    total = rng.standard_normal(n_samples) * uncertainty.total_std
    p = p_base[None, :] - np.outer(total, alpha)
    cost = grid.base_mva * ((p**2 @ a2) + p @ a1)
    mean = float(cost.mean())
    ci = WILSON_Z99 * float(cost.std(ddof=1)) / math.sqrt(n_samples) if n_samples > 1 else 0.0
    return mean, ci


@dataclass(frozen=True)
class DerivativeCheck:
    family: str
    max_rel_err: float
    checked: int
    skipped: int
    tolerance: float

    @property
    def passed(self) -> bool:
        # vacuous pass when every pair was degenerate-skipped (zero margin)
        return self.max_rel_err < self.tolerance


def finite_difference_suite(
    grid: Grid,
    decision: DispatchDecision,
    uncertainty: UncertaintyModel,
    rel_step: float = 1e-6,
    wrt_lines=None,
) -> dict[str, DerivativeCheck]:
    """Central-difference verification of every analytic derivative family.

    Checks dB+/db, dT_f/db and dfbar/db at 1e-5 relative tolerance and the
    equivalent-capacity derivative at 1e-4 (its denominator amplifies
    round-off); errors below 1e-8 absolute pass regardless. Degenerate
    (floor-std) capacity rows are skipped and counted.
    """
    b = decision.susceptance
    if wrt_lines is None:
        wrt_lines = [int(k) for k in grid.flexible_line_indices] or list(range(grid.n_lines))
    injection = decision.p_base + grid.renewable_forecast - grid.load
    op = build_operator(grid, b)
    profile = moments(op, grid, decision, uncertainty)
    _, c_line = constraint_quantiles(grid)

    err_pinv, err_row, err_flow, err_emax = 0.0, 0.0, 0.0, 0.0
    n_emax, skipped = 0, 0
    for km in wrt_lines:
        h = rel_step * b[km]
        up = build_operator(grid, _bump(b, km, +h))
        dn = build_operator(grid, _bump(b, km, -h))
        fd_pinv = (up.pseudoinverse - dn.pseudoinverse) / (2 * h)
        err_pinv = max(err_pinv, _rel(d_pseudoinverse_db(op, km), fd_pinv))
        fd_ptdf = (up.ptdf - dn.ptdf) / (2 * h)
        for ij in range(grid.n_lines):
            err_row = max(err_row, _rel(d_ptdf_row_db(op, ij, km), fd_ptdf[ij]))
            fd_fl = float((fd_ptdf[ij] @ injection))
            err_flow = max(err_flow, _rel(d_baseflow_db(op, injection, ij, km), fd_fl))
            try:
                dfe = flow_limit_sensitivity(op, profile, uncertainty, c_line[ij], ij, km)
            except DegenerateStd:
                skipped += 1
                continue
            up_p = moments(up, grid, _with_b(decision, _bump(b, km, +h)), uncertainty)
            dn_p = moments(dn, grid, _with_b(decision, _bump(b, km, -h)), uncertainty)
            fd_emax = -c_line[ij] * (up_p.flow_std[ij] - dn_p.flow_std[ij]) / (2 * h)
            err_emax = max(err_emax, _rel(dfe, fd_emax))
            n_emax += 1
    n_pairs = len(wrt_lines) * grid.n_lines
    return {
        "pseudoinverse": DerivativeCheck("pseudoinverse", err_pinv, len(wrt_lines), 0, 1e-5),
        "ptdf_row": DerivativeCheck("ptdf_row", err_row, n_pairs, 0, 1e-5),
        "base_flow": DerivativeCheck("base_flow", err_flow, n_pairs, 0, 1e-5),
        "flow_limit": DerivativeCheck("flow_limit", err_emax, n_emax, skipped, 1e-4),
    }


def _bump(b: np.ndarray, k: int, h: float) -> np.ndarray:
    out = b.copy()
    out[k] += h
    return out


def _with_b(decision: DispatchDecision, b: np.ndarray) -> DispatchDecision:
    return DispatchDecision(p_base=decision.p_base, alpha=decision.alpha, susceptance=b)


def _rel(analytic, reference) -> float:
    a = np.asarray(analytic, dtype=float)
    r = np.asarray(reference, dtype=float)
    diff = float(np.linalg.norm((a - r).ravel()))
    scale = float(np.linalg.norm(r.ravel()))
    if diff < 1e-8:  # absolute floor: both effectively zero
        return 0.0
    return diff / max(scale, 1e-8)
