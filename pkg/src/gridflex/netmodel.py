"""Core network domain types and index bookkeeping.

All quantities are stored in per-unit on the system MVA base. Buses and
lines carry dense 0-based internal indices; the mapping back to external
bus numbers lives on the Grid. Every type here is immutable after
construction and safe to share across threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import DisconnectedNetwork, NotNormalized

ALPHA_SUM_TOL = 1e-9


def _frozen(a, dtype=float) -> np.ndarray:
    """Copy ``a`` into a read-only float array."""
    out = np.array(a, dtype=dtype)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class Line:
    """A transmission line (or transformer branch) in the DC model.

    ``flexibility`` is the degree of adjustability d in [0, 1); None means
    the susceptance is fixed at its rated value. Susceptance bounds follow
    b_min = b_rated/(1+d), b_max = b_rated/(1-d).
    """

    from_bus: int
    to_bus: int
    susceptance_rated: float
    capacity: float
    epsilon: float = 0.01
    flexibility: float | None = None

    def __post_init__(self):
        if self.susceptance_rated <= 0:
            raise ValueError(f"line ({self.from_bus},{self.to_bus}): susceptance must be > 0")
        if self.capacity <= 0:
            raise ValueError(f"line ({self.from_bus},{self.to_bus}): capacity must be > 0")
        if not 0.0 < self.epsilon < 0.5:
            raise ValueError(f"line ({self.from_bus},{self.to_bus}): epsilon must be in (0, 0.5)")
        if self.flexibility is not None and not 0.0 <= self.flexibility < 1.0:
            raise ValueError(f"line ({self.from_bus},{self.to_bus}): flexibility degree must be in [0, 1)")

    @property
    def is_flexible(self) -> bool:
        return self.flexibility is not None

    @property
    def susceptance_min(self) -> float:
        d = self.flexibility
        return self.susceptance_rated / (1.0 + d) if d is not None else self.susceptance_rated

    @property
    def susceptance_max(self) -> float:
        d = self.flexibility
        return self.susceptance_rated / (1.0 - d) if d is not None else self.susceptance_rated


@dataclass(frozen=True)
class Generator:
    """A dispatchable generator with convex quadratic cost.

    Cost coefficients use the per-unit quadratic convention: running at P
    p.u. with base S costs S*(cost_quadratic*P**2 + cost_linear*P) $/h.
    This equals the MW-polynomial c2*P_MW**2 + c1*P_MW with
    c2 = cost_quadratic/S and c1 = cost_linear.
    """

    bus: int
    p_min: float
    p_max: float
    cost_quadratic: float
    cost_linear: float
    epsilon: float = 0.01

    def __post_init__(self):
        if self.p_min > self.p_max:
            raise ValueError(f"generator at bus {self.bus}: p_min > p_max")
        if self.cost_quadratic < 0:
            raise ValueError(f"generator at bus {self.bus}: quadratic cost must be >= 0")
        if not 0.0 < self.epsilon < 0.5:
            raise ValueError(f"generator at bus {self.bus}: epsilon must be in (0, 0.5)")


@dataclass(frozen=True)
class Grid:
    """Immutable network description in per-unit.

    ``load`` and ``renewable_forecast`` are full bus vectors (length
    n_buses). ``bus_numbers`` maps internal index -> external bus number;
    it defaults to 1-based consecutive numbering.
    """

    n_buses: int
    lines: tuple[Line, ...]
    generators: tuple[Generator, ...]
    base_mva: float
    load: np.ndarray
    renewable_forecast: np.ndarray
    bus_numbers: tuple[int, ...] = ()

    def __post_init__(self):
        if self.base_mva <= 0:
            raise ValueError("base_mva must be > 0")
        object.__setattr__(self, "lines", tuple(self.lines))
        object.__setattr__(self, "generators", tuple(self.generators))
        object.__setattr__(self, "load", _frozen(self.load))
        object.__setattr__(self, "renewable_forecast", _frozen(self.renewable_forecast))
        if not self.bus_numbers:
            object.__setattr__(self, "bus_numbers", tuple(range(1, self.n_buses + 1)))
        if self.load.shape != (self.n_buses,):
            raise ValueError("load vector length must equal n_buses")
        if self.renewable_forecast.shape != (self.n_buses,):
            raise ValueError("renewable_forecast vector length must equal n_buses")
        if len(self.bus_numbers) != self.n_buses:
            raise ValueError("bus_numbers length must equal n_buses")
        for ln in self.lines:
            if not (0 <= ln.from_bus < self.n_buses and 0 <= ln.to_bus < self.n_buses):
                raise ValueError(f"line ({ln.from_bus},{ln.to_bus}) references an invalid bus index")
        buses = [g.bus for g in self.generators]
        if len(set(buses)) != len(buses):
            raise ValueError("generator bus indices must be distinct")
        for g in self.generators:
            if not 0 <= g.bus < self.n_buses:
                raise ValueError(f"generator bus index {g.bus} out of range")
        _check_connected(self.n_buses, self.lines)

    @property
    def n_lines(self) -> int:
        return len(self.lines)

    @cached_property
    def dispatchable_buses(self) -> np.ndarray:
        """Internal bus indices of the dispatchable set, in generator order."""
        return _frozen([g.bus for g in self.generators], dtype=int)

    @cached_property
    def flexible_line_indices(self) -> np.ndarray:
        return _frozen([k for k, ln in enumerate(self.lines) if ln.is_flexible], dtype=int)

    @cached_property
    def rated_susceptance(self) -> np.ndarray:
        return _frozen([ln.susceptance_rated for ln in self.lines])

    @cached_property
    def susceptance_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        lo = _frozen([ln.susceptance_min for ln in self.lines])
        hi = _frozen([ln.susceptance_max for ln in self.lines])
        return lo, hi

    @cached_property
    def line_capacity(self) -> np.ndarray:
        return _frozen([ln.capacity for ln in self.lines])

    def external_pair(self, k: int) -> tuple[int, int]:
        """External (from, to) bus numbers of line k."""
        ln = self.lines[k]
        return self.bus_numbers[ln.from_bus], self.bus_numbers[ln.to_bus]

    def to_megawatts(self, x):
        """Per-unit -> MW on this grid's base."""
        return np.asarray(x, dtype=float) * self.base_mva if np.ndim(x) else float(x) * self.base_mva

    def from_megawatts(self, x):
        """MW -> per-unit on this grid's base."""
        return np.asarray(x, dtype=float) / self.base_mva if np.ndim(x) else float(x) / self.base_mva

    def scatter_generation(self, values) -> np.ndarray:
        """Spread generator-ordered values onto a full bus vector."""
        out = np.zeros(self.n_buses)
        out[self.dispatchable_buses] = np.asarray(values, dtype=float)
        return out


def _check_connected(n: int, lines: tuple[Line, ...]) -> None:
    """Union-find connectivity check over the in-service line set."""
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for ln in lines:
        ri, rj = find(ln.from_bus), find(ln.to_bus)
        if ri != rj:
            parent[ri] = rj
    roots = {find(i) for i in range(n)}
    if len(roots) > 1:
        raise DisconnectedNetwork(f"network splits into {len(roots)} islands")


def incidence_matrix(grid: Grid) -> np.ndarray:
    """Signed node-line incidence matrix E (n x l).

    Column k has +1 at the from-bus and -1 at the to-bus of line k, so
    every column sums to zero.
    """
    E = np.zeros((grid.n_buses, grid.n_lines))
    for k, ln in enumerate(grid.lines):
        E[ln.from_bus, k] = 1.0
        E[ln.to_bus, k] = -1.0
    return E


@dataclass(frozen=True)
class UncertaintyModel:
    """Zero-mean renewable forecast-error model with covariance ``covariance``.

    Positive semidefiniteness forces rows/columns of buses with zero
    variance to vanish entirely, which encodes "no renewable at this bus".
    """

    covariance: np.ndarray
    _psd_tol: float = field(default=1e-10, repr=False)

    def __post_init__(self):
        cov = _frozen(self.covariance)
        object.__setattr__(self, "covariance", cov)
        if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
            raise ValueError("covariance must be a square matrix")
        if not np.allclose(cov, cov.T, atol=1e-12):
            raise ValueError("covariance must be symmetric")
        scale = max(1.0, float(np.abs(cov).max()))
        if np.linalg.eigvalsh(cov).min() < -self._psd_tol * scale:
            raise ValueError("covariance must be positive semidefinite")

    @property
    def n_buses(self) -> int:
        return self.covariance.shape[0]

    @cached_property
    def total_std(self) -> float:
        """s = sqrt(1' Sigma 1), the std of the total renewable deviation."""
        ones = np.ones(self.n_buses)
        return float(np.sqrt(max(ones @ self.covariance @ ones, 0.0)))

    @cached_property
    def sqrt_covariance(self) -> np.ndarray:
        """Symmetric PSD square root of the covariance."""
        w, V = np.linalg.eigh(self.covariance)
        w = np.where(w < 1e-12, 0.0, w)
        return _frozen((V * np.sqrt(w)) @ V.T)

    @cached_property
    def reduced_factor(self) -> np.ndarray:
        """An n x r factor L with L L' = covariance, r = rank.

        Same 2-norms as the symmetric root (||v'L|| = ||v'sqrt||) but with
        only as many columns as there are uncertain buses, which keeps
        cone dimensions small.
        """
        w, V = np.linalg.eigh(self.covariance)
        keep = w > 1e-12
        if not keep.any():
            return _frozen(np.zeros((self.n_buses, 0)))
        return _frozen(V[:, keep] * np.sqrt(w[keep]))

    @property
    def is_zero(self) -> bool:
        return not np.any(self.covariance)

    @classmethod
    def zero(cls, n_buses: int) -> "UncertaintyModel":
        return cls(np.zeros((n_buses, n_buses)))


@dataclass(frozen=True)
class DispatchDecision:
    """The decision triple: base generations, participation factors, susceptances.

    ``p_base`` and ``alpha`` are full bus vectors supported on the
    dispatchable set; ``susceptance`` is a full line vector. Participation
    factors must sum to one; nonnegativity is not required (negative
    participation is physically unusual but not excluded by the model).
    """

    p_base: np.ndarray
    alpha: np.ndarray
    susceptance: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "p_base", _frozen(self.p_base))
        object.__setattr__(self, "alpha", _frozen(self.alpha))
        object.__setattr__(self, "susceptance", _frozen(self.susceptance))
        if abs(self.alpha.sum() - 1.0) > ALPHA_SUM_TOL:
            raise NotNormalized(f"participation factors sum to {self.alpha.sum():.12g}, expected 1")

    @classmethod
    def validated(cls, grid: Grid, p_base, alpha, susceptance=None) -> "DispatchDecision":
        """Construct and check support and susceptance bounds against a grid."""
        p = np.array(p_base, dtype=float)
        a = np.array(alpha, dtype=float)
        b = grid.rated_susceptance.copy() if susceptance is None else np.array(susceptance, dtype=float)
        if p.shape != (grid.n_buses,) or a.shape != (grid.n_buses,):
            raise ValueError("p_base and alpha must be full bus vectors")
        if b.shape != (grid.n_lines,):
            raise ValueError("susceptance must be a full line vector")
        off = np.ones(grid.n_buses, dtype=bool)
        off[grid.dispatchable_buses] = False
        if np.any(p[off] != 0.0) or np.any(a[off] != 0.0):
            raise ValueError("p_base and alpha must vanish off the dispatchable set")
        lo, hi = grid.susceptance_bounds
        bad = (b < lo - 1e-9) | (b > hi + 1e-9)
        if np.any(bad):
            k = int(np.flatnonzero(bad)[0])
            raise ValueError(
                f"susceptance of line {grid.external_pair(k)} = {b[k]:.6g} outside "
                f"[{lo[k]:.6g}, {hi[k]:.6g}]"
            )
        return cls(p, a, b)
