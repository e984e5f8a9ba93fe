import numpy as np
import pytest
from scipy.special import ndtr

from gridflex.ccore import (
    constraint_quantiles,
    equivalent_limits,
    expected_cost,
    moments,
    quantile_factor,
    response_matrix,
)
from gridflex.dcflow import build_operator
from gridflex.errors import DomainError, InfeasibleMargin, NotNormalized
from gridflex.netmodel import DispatchDecision, Generator, Grid, Line, UncertaintyModel

from conftest import triangle_grid, two_bus_grid


def test_quantile_paper_value():
    assert quantile_factor(0.01) == pytest.approx(2.326, abs=1e-3)


def test_quantile_median():
    assert quantile_factor(0.5) == pytest.approx(0.0, abs=1e-12)


def test_quantile_tabulated_two_sigma():
    # Phi(2) ~ 0.97725
    assert quantile_factor(0.0228) == pytest.approx(2.0, abs=1e-3)


def test_quantile_accuracy_round_trip():
    for eps in (0.3, 0.1, 0.05, 0.01, 0.001):
        c = quantile_factor(eps)
        assert abs(ndtr(c) - (1 - eps)) < 1e-8


def test_quantile_domain():
    with pytest.raises(DomainError):
        quantile_factor(0.0)
    with pytest.raises(DomainError):
        quantile_factor(0.7)
    with pytest.raises(DomainError):
        quantile_factor(-0.1)


def test_response_matrix_hand_case():
    T = response_matrix(np.array([1.0, 0.0]))
    assert np.array_equal(T, [[0.0, -1.0], [0.0, 1.0]])


def test_response_matrix_uniform_is_centering():
    n = 4
    T = response_matrix(np.full(n, 1.0 / n))
    assert np.allclose(T, np.eye(n) - np.full((n, n), 1.0 / n))


def test_response_matrix_columns_sum_zero():
    rng = np.random.default_rng(0)
    a = rng.random(6)
    a /= a.sum()
    T = response_matrix(a)
    assert np.abs(T.sum(axis=0)).max() < 1e-12


def test_response_matrix_rejects_unnormalized():
    with pytest.raises(NotNormalized):
        response_matrix(np.array([0.4, 0.4]))


def _decision(grid, p=None, alpha=None, b=None):
    gens = grid.dispatchable_buses
    if p is None:
        p = grid.load.sum() * np.eye(grid.n_buses)[gens[0]]
    if alpha is None:
        alpha = np.eye(grid.n_buses)[gens[0]]
    return DispatchDecision(p_base=p, alpha=alpha, susceptance=b if b is not None else grid.rated_susceptance.copy())


def test_moments_zero_covariance():
    grid = two_bus_grid()
    op = build_operator(grid)
    dec = _decision(grid)
    prof = moments(op, grid, dec, UncertaintyModel.zero(2))
    assert prof.s_sigma == 0.0
    assert np.all(prof.gen_std == 0.0)
    assert np.all(prof.flow_std == 0.0)
    assert prof.flow_mean[0] == pytest.approx(1.0)  # deterministic DC flow


def test_moments_s_sigma_paper14(paper14):
    grid, unc, _ = paper14
    assert unc.total_std == pytest.approx(np.sqrt(0.2), rel=1e-12)
    assert unc.total_std == pytest.approx(0.4472, abs=1e-4)


def test_moments_two_bus_single_renewable():
    # renewable at bus 0, generator responds at bus 1 via alpha = e1:
    # flow deviation = T_f (u - e1 total) = T_f (e0 - e1) u0 -> std = sigma
    sigma = 0.3
    grid = Grid(
        n_buses=2,
        lines=(Line(0, 1, 10.0, 5.0),),
        generators=(Generator(1, 0.0, 3.0, 1.0, 10.0),),
        base_mva=100.0,
        load=np.array([0.0, 1.0]),
        renewable_forecast=np.zeros(2),
    )
    op = build_operator(grid)
    unc = UncertaintyModel(np.diag([sigma**2, 0.0]))
    dec = DispatchDecision(p_base=np.array([0.0, 1.0]), alpha=np.array([0.0, 1.0]), susceptance=np.array([10.0]))
    prof = moments(op, grid, dec, unc)
    t_diff = abs(op.ptdf[0, 0] - op.ptdf[0, 1])
    assert prof.flow_std[0] == pytest.approx(t_diff * sigma, rel=1e-12)
    assert prof.gen_std[0] == pytest.approx(sigma)  # alpha=1, s_sigma=sigma


def test_flow_std_two_routes_agree(paper14, cced14):
    grid, unc, _ = paper14
    rec = cced14.trajectory[0]
    dec = DispatchDecision(grid.scatter_generation(rec.p_base), grid.scatter_generation(rec.alpha), rec.b)
    op = build_operator(grid, rec.b)
    prof = moments(op, grid, dec, unc)
    # quadratic-form route: sqrt(row T_g Sigma T_g' row')
    M = prof.response @ unc.covariance @ prof.response.T
    for k in range(grid.n_lines):
        row = op.ptdf[k]
        alt = np.sqrt(max(row @ M @ row, 0.0))
        assert prof.flow_std[k] == pytest.approx(alt, rel=1e-10, abs=1e-12)


def test_equivalent_limits_hand_value():
    # p_max 1.0, c 2.326, s 0.4472, alpha 0.1 -> 0.8960
    grid = two_bus_grid(p_max=1.0)
    op = build_operator(grid)
    unc = UncertaintyModel(np.diag([0.2, 0.0]))  # s_sigma = 0.4472
    dec = DispatchDecision(np.array([1.0, 0.0]), np.array([0.1, 0.9]), np.array([10.0]))
    prof = moments(op, grid, dec, unc)
    lim = equivalent_limits(prof, grid, c_gen=np.array([2.326]), c_line=np.array([2.326]))
    assert lim.gen_emax[0] == pytest.approx(0.8960, abs=1e-4)
    assert lim.gen_emin[0] == pytest.approx(0.0 + 2.326 * unc.total_std * 0.1, rel=1e-12)


def test_equivalent_limits_zero_covariance_equal_physical(paper14):
    grid, _, _ = paper14
    op = build_operator(grid)
    gens = grid.dispatchable_buses
    p = grid.scatter_generation(np.full(len(gens), grid.load.sum() / len(gens)))
    a = grid.scatter_generation(np.full(len(gens), 1.0 / len(gens)))
    dec = DispatchDecision(p, a, grid.rated_susceptance.copy())
    prof = moments(op, grid, dec, UncertaintyModel.zero(grid.n_buses))
    lim = equivalent_limits(prof, grid)
    assert np.array_equal(lim.gen_emax, [g.p_max for g in grid.generators])
    assert np.array_equal(lim.gen_emin, [g.p_min for g in grid.generators])
    assert np.array_equal(lim.flow_emax, grid.line_capacity)


def test_margin_monotonicity_under_variance_growth():
    grid = triangle_grid()
    op = build_operator(grid)
    dec = DispatchDecision(
        np.array([1.0, 0.0, 0.0]), np.array([0.6, 0.0, 0.4]), grid.rated_susceptance.copy()
    )
    rng = np.random.default_rng(5)
    base_diag = np.array([0.02, 0.03, 0.0])
    prev = None
    for scale in (0.0, 0.5, 1.0, 2.0, 4.0):
        unc = UncertaintyModel(np.diag(base_diag * scale))
        prof = moments(op, grid, dec, unc)
        lim = equivalent_limits(prof, grid, c_gen=np.full(2, 2.0), c_line=np.full(3, 2.0))
        if prev is not None:
            assert np.all(lim.flow_emax <= prev + 1e-12)
        prev = lim.flow_emax
    # random single-entry bumps never increase any equivalent capacity
    for _ in range(20):
        d1 = rng.uniform(0.0, 0.1, size=3)
        d1[2] = 0.0
        bumped = d1.copy()
        bumped[rng.integers(0, 2)] += rng.uniform(0.01, 0.1)
        lim1 = equivalent_limits(
            moments(op, grid, dec, UncertaintyModel(np.diag(d1))), grid,
            c_gen=np.full(2, 2.0), c_line=np.full(3, 2.0),
        )
        lim2 = equivalent_limits(
            moments(op, grid, dec, UncertaintyModel(np.diag(bumped))), grid,
            c_gen=np.full(2, 2.0), c_line=np.full(3, 2.0),
        )
        assert np.all(lim2.flow_emax <= lim1.flow_emax + 1e-12)


def test_equivalent_limits_infeasible_margin():
    # renewable at the far bus: its deviation must cross the tiny line
    grid = two_bus_grid(capacity=0.01, p_max=5.0)
    op = build_operator(grid)
    unc = UncertaintyModel(np.diag([0.0, 1.0]))
    dec = DispatchDecision(np.array([1.0, 0.0]), np.array([1.0, 0.0]), np.array([10.0]))
    prof = moments(op, grid, dec, unc)
    with pytest.raises(InfeasibleMargin):
        equivalent_limits(prof, grid)


def test_expected_cost_table_ii_s2(paper14):
    grid, unc, _ = paper14
    p_mw = np.array([161.76, 47.98, 144.36, 76.41, 87.49])
    alpha = np.array([0.23, 0.0, 0.20, 0.39, 0.18])
    dec = DispatchDecision(
        grid.scatter_generation(p_mw / grid.base_mva),
        grid.scatter_generation(alpha),
        grid.rated_susceptance.copy(),
    )
    h = expected_cost(dec, grid, unc.total_std)
    assert h == pytest.approx(18578.8, abs=2.0)


def test_expected_cost_s1_minus_s3_term(paper14):
    # identical base dispatch: difference is exactly the participation term
    grid, unc, _ = paper14
    p = grid.scatter_generation(np.array([2.4984, 0.43, 0.7505, 0.7505, 0.7506]))
    alpha = grid.scatter_generation(np.array([0.07, 0.0, 0.31, 0.31, 0.31]))
    dec = DispatchDecision(p, alpha, grid.rated_susceptance.copy())
    h_unc = expected_cost(dec, grid, unc.total_std)
    h_det = expected_cost(dec, grid, 0.0)
    a2 = np.array([g.cost_quadratic for g in grid.generators])
    ag = alpha[grid.dispatchable_buses]
    analytic = unc.total_std**2 * grid.base_mva * (ag @ (a2 * ag))
    assert h_unc - h_det == pytest.approx(analytic, rel=1e-12)
    assert h_unc - h_det == pytest.approx(6.1, abs=0.5)


def test_expected_cost_linear_when_no_quadratic():
    grid = Grid(
        n_buses=2,
        lines=(Line(0, 1, 10.0, 5.0),),
        generators=(Generator(0, 0.0, 3.0, 0.0, 7.0),),
        base_mva=100.0,
        load=np.array([0.0, 1.0]),
        renewable_forecast=np.zeros(2),
    )
    dec = DispatchDecision(np.array([1.0, 0.0]), np.array([1.0, 0.0]), np.array([10.0]))
    assert expected_cost(dec, grid, 0.7) == pytest.approx(100.0 * 7.0 * 1.0)


def test_table_i_structure(paper14, cced14):
    """Which decision variables enter which constraint components."""
    grid, unc, _ = paper14
    rec = cced14.trajectory[0]
    p = grid.scatter_generation(rec.p_base)
    a = grid.scatter_generation(rec.alpha)
    b0 = grid.rated_susceptance.copy()
    b1 = b0.copy()
    k = int(grid.flexible_line_indices[0])
    b1[k] = grid.lines[k].susceptance_max
    cg, cl = constraint_quantiles(grid)

    def limits(p_, a_, b_):
        op = build_operator(grid, b_)
        prof = moments(op, grid, DispatchDecision(p_, a_, b_), unc)
        return prof, equivalent_limits(prof, grid, cg, cl)

    prof0, lim0 = limits(p, a, b0)
    prof_b, lim_b = limits(p, a, b1)
    # generation limits do not depend on b
    assert np.array_equal(lim0.gen_emax, lim_b.gen_emax)
    assert np.array_equal(lim0.gen_emin, lim_b.gen_emin)
    # flow limits and base flows do depend on b
    assert np.abs(lim0.flow_emax - lim_b.flow_emax).max() > 1e-6
    assert np.abs(prof0.flow_mean - prof_b.flow_mean).max() > 1e-6
    # base flow does not depend on alpha at fixed p
    a_alt = grid.scatter_generation(np.array([0.5, 0.5, 0.0, 0.0, 0.0]))
    prof_a, lim_a = limits(p, a_alt, b0)
    assert np.allclose(prof_a.flow_mean, prof0.flow_mean, atol=1e-12)
    # flow limits do depend on alpha; generation limits too
    assert np.abs(lim_a.flow_emax - lim0.flow_emax).max() > 1e-9
    assert np.abs(lim_a.gen_emax - lim0.gen_emax).max() > 1e-9
