import numpy as np
import pytest

from gridflex import caseio
from gridflex.netmodel import Generator, Grid, Line, UncertaintyModel
from gridflex.orchestrator import solve_cced, solve_ed


def load_bundled(case_name, scenario_name):
    raw = caseio.load_case(caseio.bundled_path(f"{case_name}.m"))
    scen, algo = caseio.load_scenario(caseio.bundled_path(f"{scenario_name}.scenario"))
    return raw, scen, algo


@pytest.fixture(scope="session")
def paper14():
    raw, scen, algo = load_bundled("case14", "paper14")
    grid, unc = caseio.apply_scenario(raw, scen)
    return grid, unc, algo


@pytest.fixture(scope="session")
def paper118():
    raw, scen, algo = load_bundled("case118", "paper118")
    grid, unc = caseio.apply_scenario(raw, scen)
    return grid, unc, algo


@pytest.fixture(scope="session")
def cced14(paper14):
    grid, unc, algo = paper14
    return solve_cced(grid, unc, algo)


@pytest.fixture(scope="session")
def ed14(paper14):
    grid, _, algo = paper14
    return solve_ed(grid, algo)


@pytest.fixture(scope="session")
def cced118(paper118):
    grid, unc, algo = paper118
    return solve_cced(grid, unc, algo)


@pytest.fixture(scope="session")
def ed118(paper118):
    grid, _, algo = paper118
    return solve_ed(grid, algo)


def two_bus_grid(b=10.0, capacity=5.0, load=1.0, p_max=2.0, epsilon=0.01, flexibility=None):
    return Grid(
        n_buses=2,
        lines=(Line(0, 1, b, capacity, epsilon, flexibility),),
        generators=(Generator(0, 0.0, p_max, 1.0, 10.0, epsilon),),
        base_mva=100.0,
        load=np.array([0.0, load]),
        renewable_forecast=np.zeros(2),
    )


def triangle_grid(b=(1.0, 1.0, 1.0), capacity=10.0):
    lines = (
        Line(0, 1, b[0], capacity),
        Line(1, 2, b[1], capacity),
        Line(0, 2, b[2], capacity),
    )
    gens = (Generator(0, 0.0, 3.0, 1.0, 10.0), Generator(2, 0.0, 3.0, 2.0, 12.0))
    return Grid(
        n_buses=3,
        lines=lines,
        generators=gens,
        base_mva=100.0,
        load=np.array([0.0, 1.0, 0.0]),
        renewable_forecast=np.zeros(3),
    )


def random_connected_grid(rng, n_buses=6, extra_lines=3, flexible=True):
    """Spanning tree plus random chords; susceptances and loads randomized."""
    lines = []
    seen = set()
    for j in range(1, n_buses):
        i = int(rng.integers(0, j))
        lines.append((i, j))
        seen.add((i, j))
    while len(lines) < n_buses - 1 + extra_lines:
        i, j = sorted(rng.choice(n_buses, size=2, replace=False).tolist())
        if (i, j) not in seen:
            seen.add((i, j))
            lines.append((i, j))
    line_objs = tuple(
        Line(i, j, float(rng.uniform(1.0, 12.0)), 10.0, 0.01, 0.5 if flexible else None) for i, j in lines
    )
    gens = (Generator(0, 0.0, 5.0, 1.0, 10.0),)
    load = rng.uniform(0.05, 0.3, size=n_buses)
    load[0] = 0.0
    cov = np.zeros((n_buses, n_buses))
    for k in rng.choice(np.arange(1, n_buses), size=2, replace=False):
        cov[k, k] = float(rng.uniform(0.01, 0.08))
    grid = Grid(
        n_buses=n_buses,
        lines=line_objs,
        generators=gens,
        base_mva=100.0,
        load=load,
        renewable_forecast=np.zeros(n_buses),
    )
    return grid, UncertaintyModel(cov)
