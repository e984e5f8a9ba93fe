import numpy as np
import pytest

from gridflex.ccore import expected_cost, quantile_factor
from gridflex.dcflow import build_operator
from gridflex.netmodel import DispatchDecision, Generator, Grid, Line, UncertaintyModel
from gridflex.validate import (
    empirical_cost,
    finite_difference_suite,
    monte_carlo_validate,
    wilson_interval,
)

from conftest import random_connected_grid, two_bus_grid


def _paper14_s1_decision(paper14, cced14):
    grid, _, _ = paper14
    sol = cced14.solution
    return DispatchDecision.validated(
        grid,
        grid.scatter_generation(sol.p_base),
        grid.scatter_generation(sol.alpha),
        cced14.decision.susceptance,
    )


def test_zero_covariance_zero_violations(paper14, ed14):
    grid, _, _ = paper14
    dec = DispatchDecision(
        grid.scatter_generation(ed14.solution.p_base),
        grid.scatter_generation(ed14.solution.alpha),
        ed14.decision.susceptance,
    )
    rep = monte_carlo_validate(grid, UncertaintyModel.zero(grid.n_buses), dec, 2000, seed=1)
    assert all(c.violations == 0 for c in rep.checks)


def _tight_toy(eps=0.05):
    sigma2 = 0.09
    unc = UncertaintyModel(np.diag([sigma2, 0.0]))
    c = quantile_factor(eps)
    load = 1.0
    # generation box tight: p_max = p_base + c * s * alpha with alpha = 1
    p_max = load + c * np.sqrt(sigma2)
    grid = Grid(
        n_buses=2,
        lines=(Line(0, 1, 10.0, 50.0, eps),),
        generators=(Generator(0, -5.0, p_max, 1.0, 10.0, eps),),
        base_mva=100.0,
        load=np.array([0.0, load]),
        renewable_forecast=np.zeros(2),
    )
    dec = DispatchDecision(np.array([load, 0.0]), np.array([1.0, 0.0]), np.array([10.0]))
    return grid, unc, dec


def test_tight_constraint_hits_epsilon_rate():
    grid, unc, dec = _tight_toy(eps=0.05)
    n = 200_000
    rep = monte_carlo_validate(grid, unc, dec, n, seed=42)
    gen_max = next(c for c in rep.checks if c.kind == "gen-max")
    band = 3 * np.sqrt(0.05 * 0.95 / n)
    assert gen_max.rate == pytest.approx(0.05, abs=band)
    assert gen_max.within_band
    assert rep.all_within_band


def test_violated_dispatch_is_flagged():
    grid, unc, dec = _tight_toy(eps=0.05)
    bad = DispatchDecision(dec.p_base * 1.2, dec.alpha, dec.susceptance)
    rep = monte_carlo_validate(grid, unc, bad, 50_000, seed=3)
    gen_max = next(c for c in rep.checks if c.kind == "gen-max")
    assert not gen_max.within_band
    assert not rep.all_within_band


def test_reproducibility_same_seed():
    grid, unc, dec = _tight_toy()
    r1 = monte_carlo_validate(grid, unc, dec, 30_000, seed=9)
    r2 = monte_carlo_validate(grid, unc, dec, 30_000, seed=9)
    assert [c.violations for c in r1.checks] == [c.violations for c in r2.checks]
    assert r1.cost_mean == r2.cost_mean


def test_thread_count_does_not_change_totals(monkeypatch):
    grid, unc, dec = _tight_toy()
    r1 = monte_carlo_validate(grid, unc, dec, 60_000, seed=4)
    monkeypatch.setenv("GRIDFLEX_THREADS", "4")
    r2 = monte_carlo_validate(grid, unc, dec, 60_000, seed=4)
    assert [c.violations for c in r1.checks] == [c.violations for c in r2.checks]
    assert r1.cost_mean == pytest.approx(r2.cost_mean, rel=1e-12)


def test_two_sampling_routes_agree_in_distribution():
    """Symmetric-root sampling vs a permuted eigen-factor route."""
    grid, unc, dec = _tight_toy(eps=0.05)
    n = 120_000
    rep = monte_carlo_validate(grid, unc, dec, n, seed=15)
    rate_a = next(c for c in rep.checks if c.kind == "gen-max").rate

    # independent route: u = z @ L.T with L column-permuted eigenfactor
    w, V = np.linalg.eigh(unc.covariance)
    keep = w > 1e-15
    L = (V[:, keep] * np.sqrt(w[keep]))[:, ::-1]
    rng = np.random.default_rng(1234)
    z = rng.standard_normal((n, keep.sum()))
    u = z @ L.T
    total = u.sum(axis=1)
    gens = grid.dispatchable_buses
    p = dec.p_base[gens][None, :] - np.outer(total, dec.alpha[gens])
    rate_b = float((p[:, 0] > grid.generators[0].p_max).mean())
    joint = 3 * np.sqrt(2 * 0.05 * 0.95 / n)
    assert abs(rate_a - rate_b) <= joint


def test_empirical_cost_zero_covariance_exact(paper14, ed14):
    grid, _, _ = paper14
    dec = DispatchDecision(
        grid.scatter_generation(ed14.solution.p_base),
        grid.scatter_generation(ed14.solution.alpha),
        ed14.decision.susceptance,
    )
    mean, ci = empirical_cost(grid, UncertaintyModel.zero(grid.n_buses), dec, 5000, seed=0)
    assert ci == pytest.approx(0.0, abs=1e-9)
    assert mean == pytest.approx(expected_cost(dec, grid, 0.0), rel=1e-12)


def test_empirical_cost_two_bus_closed_form():
    sigma2 = 0.04
    grid = two_bus_grid(p_max=3.0)
    unc = UncertaintyModel(np.diag([sigma2, 0.0]))
    dec = DispatchDecision(np.array([1.0, 0.0]), np.array([1.0, 0.0]), np.array([10.0]))
    mean, ci = empirical_cost(grid, unc, dec, 400_000, seed=2)
    analytic = expected_cost(dec, grid, np.sqrt(sigma2))
    assert abs(mean - analytic) <= max(3 * ci / 2.5758, 1e-6)  # 3-sigma band


def test_empirical_cost_matches_analytic_ieee14(paper14, cced14):
    grid, unc, _ = paper14
    dec = _paper14_s1_decision(paper14, cced14)
    mean, ci = empirical_cost(grid, unc, dec, 1_000_000, seed=11)
    assert abs(mean - cced14.cost) <= ci * (3 / 2.5758)


def test_monte_carlo_empirical_cost_matches_expected(paper14, cced14):
    grid, unc, _ = paper14
    dec = _paper14_s1_decision(paper14, cced14)
    rep = monte_carlo_validate(grid, unc, dec, 200_000, seed=8)
    assert abs(rep.cost_mean - cced14.cost) <= rep.cost_ci99 * (3 / 2.5758)


def test_sample_floor_enforced():
    grid, unc, dec = _tight_toy()
    with pytest.raises(ValueError):
        monte_carlo_validate(grid, unc, dec, 999)


def test_wilson_interval_basics():
    lo, hi = wilson_interval(0, 1000)
    assert lo == 0.0 and hi < 0.01
    lo, hi = wilson_interval(10, 1000)
    assert lo < 0.01 < hi


def test_interval_widths_shrink_as_sqrt_n():
    grid, unc, dec = _tight_toy()
    widths = []
    for n in (10_000, 40_000, 160_000):
        rep = monte_carlo_validate(grid, unc, dec, n, seed=21)
        c = next(ch for ch in rep.checks if ch.kind == "gen-max")
        lo, hi = c.wilson_99
        widths.append(hi - lo)
    # each 4x sample increase should roughly halve the width
    assert widths[0] / widths[1] == pytest.approx(2.0, rel=0.25)
    assert widths[1] / widths[2] == pytest.approx(2.0, rel=0.25)


def test_fd_suite_passes_ieee14(paper14, cced14):
    grid, unc, _ = paper14
    dec = _paper14_s1_decision(paper14, cced14)
    results = finite_difference_suite(grid, dec, unc)
    for fam, check in results.items():
        assert check.passed, f"{fam}: max rel err {check.max_rel_err}"
    assert results["pseudoinverse"].checked == len(grid.flexible_line_indices)


def test_fd_suite_degenerate_rows_skipped():
    grid = two_bus_grid(flexibility=0.5)
    dec = DispatchDecision(np.array([1.0, 0.0]), np.array([1.0, 0.0]), grid.rated_susceptance.copy())
    results = finite_difference_suite(grid, dec, UncertaintyModel.zero(2))
    assert results["flow_limit"].checked == 0
    assert results["flow_limit"].skipped > 0
    assert results["pseudoinverse"].passed


def test_fd_suite_random_graphs_sample():
    rng = np.random.default_rng(77)
    for _ in range(5):
        grid, unc = random_connected_grid(rng)
        gens = grid.dispatchable_buses
        p = grid.scatter_generation([grid.load.sum()])
        a = grid.scatter_generation([1.0])
        dec = DispatchDecision(p, a, grid.rated_susceptance.copy())
        results = finite_difference_suite(grid, dec, unc)
        for fam, check in results.items():
            assert check.passed, f"{fam}: {check.max_rel_err}"
