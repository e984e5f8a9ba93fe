"""Case-file ingestion: MATPOWER text parsing and scenario overlay.

The parser covers the MATPOWER subset needed for DC dispatch studies:
baseMVA, the bus/gen/branch matrices and polynomial gencost. A scenario
document (INI, sections [scenario] and [algorithm]) overlays study
settings: load and capacity scaling, renewable placement and variances,
flexible-line designation, capacity overrides and cost overrides. Bus
numbers inside scenario files are external MATPOWER numbering; powers are
MW; variances are p.u. squared.

Grammar of the compound scenario values::

    renewable_buses    = 1, 3, 6, 9
    renewable_variance = 0.05            (scalar, or one value per bus)
    flexible_lines     = 1-5:0.7, 2-3:0.7       (from-to:degree)
    capacity_overrides = 1-2:140, 7-9:100       (from-to:MW)
    cost_overrides     = 1:4.3:20, 2:25:20      (bus:a2:a1, a2 in $/h/p.u.^2)
"""

from __future__ import annotations

import configparser
import re
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .ccore import epsilon_for_quantile
from .errors import (
    DisconnectedNetwork,
    MalformedCase,
    UnknownBus,
    UnknownLine,
    UnsupportedFeature,
)
from .netmodel import Generator, Grid, Line, UncertaintyModel


@dataclass(frozen=True)
class RawBus:
    number: int
    p_demand: float  # MW


@dataclass(frozen=True)
class RawGen:
    bus: int
    p_max: float  # MW
    p_min: float  # MW
    status: int
    cost_quadratic: float | None = None  # $/MW^2 h (MATPOWER c2)
    cost_linear: float | None = None  # $/MWh (MATPOWER c1)


@dataclass(frozen=True)
class RawBranch:
    from_bus: int
    to_bus: int
    reactance: float
    rate_a: float  # MW, 0 = unlimited
    ratio: float  # 0 = no transformer
    status: int


@dataclass(frozen=True)
class RawCase:
    base_mva: float
    buses: tuple[RawBus, ...]
    gens: tuple[RawGen, ...]
    branches: tuple[RawBranch, ...]


_MATRIX_RE = re.compile(r"mpc\.(\w+)\s*=\s*\[(.*?)\];", re.DOTALL)
_SCALAR_RE = re.compile(r"mpc\.(\w+)\s*=\s*([0-9eE+.\-]+)\s*;")


def _strip_comments(text: str) -> str:
    return re.sub(r"%[^\n]*", "", text)


def _parse_matrix(body: str, name: str, line0: int) -> list[list[float]]:
    rows = []
    widths = {}
    offset = 0
    for chunk in re.split(r"[;\n]", body):
        line = line0 + body.count("\n", 0, offset)
        offset += len(chunk) + 1
        chunk = chunk.strip()
        if not chunk:
            continue
        try:
            row = [float(tok) for tok in chunk.split()]
        except ValueError as exc:
            raise MalformedCase(f"mpc.{name} line {line}: non-numeric entry in {chunk[:40]!r}") from exc
        rows.append(row)
        widths.setdefault(len(row), line)
    if len(widths) > 1:
        detail = ", ".join(f"{w} columns at line {ln}" for w, ln in sorted(widths.items()))
        raise MalformedCase(f"ragged rows in mpc.{name}: {detail}")
    return rows


def parse_matpower(text: str) -> RawCase:
    """Parse MATPOWER case text into a RawCase.

    Unused columns are ignored. Raises MalformedCase on missing matrices or
    ragged rows, UnsupportedFeature on DC lines or piecewise-linear costs.
    """
    clean = _strip_comments(text)
    matrices = {
        m.group(1): _parse_matrix(m.group(2), m.group(1), clean.count("\n", 0, m.start(2)) + 1)
        for m in _MATRIX_RE.finditer(clean)
    }
    scalars = {m.group(1): float(m.group(2)) for m in _SCALAR_RE.finditer(clean)}
    if "dcline" in matrices:
        raise UnsupportedFeature("DC lines are not supported")
    if "baseMVA" not in scalars:
        raise MalformedCase("missing mpc.baseMVA")
    for required in ("bus", "gen", "branch"):
        if required not in matrices or not matrices[required]:
            raise MalformedCase(f"missing mpc.{required}")
    bus_rows = matrices["bus"]
    if len(bus_rows[0]) < 3:
        raise MalformedCase("bus matrix needs at least 3 columns")
    buses = tuple(RawBus(number=int(r[0]), p_demand=r[2]) for r in bus_rows)

    gen_rows = matrices["gen"]
    if len(gen_rows[0]) < 10:
        raise MalformedCase("gen matrix needs at least 10 columns")
    costs: list[tuple[float, float] | None] = [None] * len(gen_rows)
    if "gencost" in matrices:
        cost_rows = matrices["gencost"][: len(gen_rows)]
        for i, r in enumerate(cost_rows):
            if int(r[0]) != 2:
                raise UnsupportedFeature("only polynomial gencost (MODEL=2) is supported")
            n_coef = int(r[3])
            if n_coef > 3:
                raise UnsupportedFeature("polynomial gencost degree above 2 is not supported")
            coef = r[4 : 4 + n_coef]
            c2 = coef[0] if n_coef == 3 else 0.0
            c1 = coef[-2] if n_coef >= 2 else 0.0
            costs[i] = (c2, c1)
    gens = tuple(
        RawGen(
            bus=int(r[0]),
            p_max=r[8],
            p_min=r[9],
            status=int(r[7]),
            cost_quadratic=None if costs[i] is None else costs[i][0],
            cost_linear=None if costs[i] is None else costs[i][1],
        )
        for i, r in enumerate(gen_rows)
    )

    branch_rows = matrices["branch"]
    if len(branch_rows[0]) < 11:
        raise MalformedCase("branch matrix needs at least 11 columns")
    branches = tuple(
        RawBranch(
            from_bus=int(r[0]),
            to_bus=int(r[1]),
            reactance=r[3],
            rate_a=r[5],
            ratio=r[8],
            status=int(r[10]),
        )
        for r in branch_rows
    )
    return RawCase(base_mva=scalars["baseMVA"], buses=buses, gens=gens, branches=branches)


@dataclass(frozen=True)
class ScenarioConfig:
    """Study overlay applied on top of a raw case."""

    load_scale: float = 1.0
    gen_capacity_scale: float = 1.0
    renewable_buses: tuple[int, ...] = ()
    renewable_variance: tuple[float, ...] = ()  # p.u.^2, one per renewable bus
    flexible_lines: tuple[tuple[int, int, float], ...] = ()  # (from, to, degree)
    capacity_default: float | None = None  # MW, applied to every line
    capacity_overrides: tuple[tuple[int, int, float], ...] = ()  # (from, to, MW)
    epsilon_gen: float = 0.01
    epsilon_line: float = 0.01
    quantile_c: float | None = None  # fixes c directly; overrides the epsilons
    cost_overrides: tuple[tuple[int, float, float], ...] = ()  # (bus, a2, a1)

    def __post_init__(self):
        if self.load_scale <= 0 or self.gen_capacity_scale <= 0:
            raise ValueError("scenario scales must be > 0")
        if any(v < 0 for v in self.renewable_variance):
            raise ValueError("renewable variances must be >= 0")
        if len(self.renewable_variance) not in (0, 1, len(self.renewable_buses)):
            raise ValueError("renewable_variance must be scalar or match renewable_buses")


@dataclass(frozen=True)
class AlgorithmConfig:
    """Knobs of the alternate-iteration solver."""

    delta: float = 1e-4  # convergence threshold on |delta b|, p.u.
    beta: float = 0.1  # trust-region reduction factor
    trust_region_frac: float = 0.3  # initial trust region as fraction of rated b
    max_outer_iterations: int = 100
    max_shrink_per_iteration: int = 20
    dual_binding_tol: float = 1e-5
    primal_tol: float = 1e-6
    socp_tolerance: float = 1e-8

    def __post_init__(self):
        if not 0.0 < self.beta < 1.0:
            raise ValueError("beta must be in (0, 1)")
        if self.delta <= 0:
            raise ValueError("delta must be > 0")
        if self.max_outer_iterations < 1 or self.max_shrink_per_iteration < 1:
            raise ValueError("iteration caps must be >= 1")
        if self.trust_region_frac <= 0:
            raise ValueError("trust_region_frac must be > 0")


def apply_scenario(raw: RawCase, scenario: ScenarioConfig) -> tuple[Grid, UncertaintyModel]:
    """Overlay a scenario on a raw case and build the validated model pair.

    Susceptances come from b = 1/x (series reactance only; resistance,
    charging and transformer ratios are outside the lossless DC model).
    Out-of-service branches are dropped first. The covariance is diagonal
    with the scenario variances at the renewable buses.
    """
    base = raw.base_mva
    numbers = [b.number for b in raw.buses]
    if len(set(numbers)) != len(numbers):
        raise MalformedCase("duplicate bus numbers in case")
    index_of = {num: i for i, num in enumerate(numbers)}
    n = len(numbers)

    load = np.array([b.p_demand for b in raw.buses]) * scenario.load_scale / base
    renewable_forecast = np.zeros(n)

    # per-branch susceptance, capacity and flexibility
    in_service = [br for br in raw.branches if br.status != 0]
    flex_degree: dict[int, float] = {}
    for fr, to, d in scenario.flexible_lines:
        matches = _matching_branches(in_service, index_of, fr, to)
        if not matches:
            raise UnknownLine(f"flexible line ({fr},{to}) not found in case")
        for k in matches:
            flex_degree[k] = d
    capacity = np.full(len(in_service), np.inf)
    for k, br in enumerate(in_service):
        if scenario.capacity_default is not None:
            capacity[k] = scenario.capacity_default / base
        elif br.rate_a > 0:
            capacity[k] = br.rate_a / base
    for fr, to, mw in scenario.capacity_overrides:
        matches = _matching_branches(in_service, index_of, fr, to)
        if not matches:
            raise UnknownLine(f"capacity override ({fr},{to}) not found in case")
        for k in matches:
            capacity[k] = mw / base

    eps_line = scenario.epsilon_line
    eps_gen = scenario.epsilon_gen
    if scenario.quantile_c is not None:
        eps_line = eps_gen = epsilon_for_quantile(scenario.quantile_c)

    lines = []
    for k, br in enumerate(in_service):
        if br.from_bus not in index_of or br.to_bus not in index_of:
            raise MalformedCase(f"branch ({br.from_bus},{br.to_bus}) references unknown bus")
        if br.reactance <= 0:
            raise UnsupportedFeature(f"branch ({br.from_bus},{br.to_bus}): nonpositive reactance")
        lines.append(
            Line(
                from_bus=index_of[br.from_bus],
                to_bus=index_of[br.to_bus],
                susceptance_rated=1.0 / br.reactance,
                capacity=capacity[k],
                epsilon=eps_line,
                flexibility=flex_degree.get(k),
            )
        )

    cost_map = {bus: (a2, a1) for bus, a2, a1 in scenario.cost_overrides}
    for bus in cost_map:
        if bus not in index_of:
            raise UnknownBus(f"cost override references unknown bus {bus}")
    generators = []
    for g in raw.gens:
        if g.status == 0:
            continue
        if g.bus not in index_of:
            raise MalformedCase(f"generator references unknown bus {g.bus}")
        if g.bus in cost_map:
            a2, a1 = cost_map[g.bus]
        elif g.cost_quadratic is not None:
            # MATPOWER $/MW^2 h -> per-unit quadratic convention
            a2, a1 = g.cost_quadratic * base, g.cost_linear
        else:
            raise MalformedCase(f"no cost data for generator at bus {g.bus}")
        generators.append(
            Generator(
                bus=index_of[g.bus],
                p_min=g.p_min * scenario.gen_capacity_scale / base,
                p_max=g.p_max * scenario.gen_capacity_scale / base,
                cost_quadratic=a2,
                cost_linear=a1,
                epsilon=eps_gen,
            )
        )

    cov = np.zeros((n, n))
    if scenario.renewable_buses:
        variances = scenario.renewable_variance
        if len(variances) == 1:
            variances = variances * len(scenario.renewable_buses)
        for bus, var in zip(scenario.renewable_buses, variances):
            if bus not in index_of:
                raise UnknownBus(f"renewable bus {bus} not in case")
            cov[index_of[bus], index_of[bus]] = var

    try:
        grid = Grid(
            n_buses=n,
            lines=tuple(lines),
            generators=tuple(generators),
            base_mva=base,
            load=load,
            renewable_forecast=renewable_forecast,
            bus_numbers=tuple(numbers),
        )
    except DisconnectedNetwork as exc:
        raise UnsupportedFeature(f"out-of-service islanding: {exc}") from exc
    return grid, UncertaintyModel(cov)


def _matching_branches(branches, index_of, fr: int, to: int) -> list[int]:
    """All in-service branch positions joining external buses fr and to."""
    if fr not in index_of or to not in index_of:
        raise UnknownBus(f"line reference ({fr},{to}) uses unknown bus")
    pair = {fr, to}
    return [k for k, br in enumerate(branches) if {br.from_bus, br.to_bus} == pair]


def _parse_pairs(value: str, what: str) -> list[tuple[int, int, float]]:
    out = []
    for item in _split_list(value):
        m = re.fullmatch(r"(\d+)\s*-\s*(\d+)\s*:\s*([0-9eE+.\-]+)", item)
        if not m:
            raise ValueError(f"bad {what} entry {item!r}; expected from-to:value")
        out.append((int(m.group(1)), int(m.group(2)), float(m.group(3))))
    return out


def _split_list(value: str) -> list[str]:
    return [tok.strip() for tok in value.split(",") if tok.strip()]


def parse_scenario(text: str) -> tuple[ScenarioConfig, AlgorithmConfig]:
    """Parse a scenario document into its scenario and algorithm configs."""
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ValueError(f"bad scenario document: {exc}") from exc
    sc: dict = {}
    if cp.has_section("scenario"):
        s = cp["scenario"]
        if "load_scale" in s:
            sc["load_scale"] = s.getfloat("load_scale")
        if "gen_capacity_scale" in s:
            sc["gen_capacity_scale"] = s.getfloat("gen_capacity_scale")
        if "renewable_buses" in s:
            sc["renewable_buses"] = tuple(int(tok) for tok in _split_list(s["renewable_buses"]))
        if "renewable_variance" in s:
            sc["renewable_variance"] = tuple(float(tok) for tok in _split_list(s["renewable_variance"]))
        if "flexible_lines" in s:
            sc["flexible_lines"] = tuple(_parse_pairs(s["flexible_lines"], "flexible_lines"))
        if "capacity_default" in s:
            sc["capacity_default"] = s.getfloat("capacity_default")
        if "capacity_overrides" in s:
            sc["capacity_overrides"] = tuple(_parse_pairs(s["capacity_overrides"], "capacity_overrides"))
        if "epsilon_gen" in s:
            sc["epsilon_gen"] = s.getfloat("epsilon_gen")
        if "epsilon_line" in s:
            sc["epsilon_line"] = s.getfloat("epsilon_line")
        if "quantile_c" in s:
            sc["quantile_c"] = s.getfloat("quantile_c")
        if "cost_overrides" in s:
            entries = []
            for item in _split_list(s["cost_overrides"]):
                parts = item.split(":")
                if len(parts) != 3:
                    raise ValueError(f"bad cost_overrides entry {item!r}; expected bus:a2:a1")
                entries.append((int(parts[0]), float(parts[1]), float(parts[2])))
            sc["cost_overrides"] = tuple(entries)
    ac: dict = {}
    if cp.has_section("algorithm"):
        a = cp["algorithm"]
        for key in (
            "delta",
            "beta",
            "trust_region_frac",
            "dual_binding_tol",
            "primal_tol",
            "socp_tolerance",
        ):
            if key in a:
                ac[key] = a.getfloat(key)
        for key in ("max_outer_iterations", "max_shrink_per_iteration"):
            if key in a:
                ac[key] = a.getint(key)
    return ScenarioConfig(**sc), AlgorithmConfig(**ac)


def load_case(path) -> RawCase:
    with open(path, encoding="utf-8") as fh:
        return parse_matpower(fh.read())


def load_scenario(path) -> tuple[ScenarioConfig, AlgorithmConfig]:
    with open(path, encoding="utf-8") as fh:
        return parse_scenario(fh.read())


def bundled_path(name: str):
    """Path to a bundled fixture (case14.m, paper14.scenario, ...)."""
    return resources.files("gridflex") / "fixtures" / name
