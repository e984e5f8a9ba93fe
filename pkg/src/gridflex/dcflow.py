"""DC network algebra: admittance matrix, pseudoinverse, PTDF, susceptance derivatives.

The admittance matrix B = E diag(b) E' of a connected network has a single
zero eigenvalue along the all-ones vector, so its Moore-Penrose inverse is
computed exactly through the rank-one correction

    B+ = (B + J/n)^-1 - J/n,    J = 11'.

Everything downstream (flows, sensitivities) is dense; the operator is
rebuilt from scratch whenever the susceptance vector changes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import SingularNetwork, UnbalancedInjection
from .netmodel import Grid, incidence_matrix

BALANCE_TOL = 1e-8


@dataclass(frozen=True)
class NetworkOperator:
    """Dense network operator at a fixed susceptance vector.

    Attributes
    ----------
    b : numpy.ndarray, shape (l,)
        Susceptance vector the operator was built from.
    incidence : numpy.ndarray, shape (n, l)
        Signed incidence matrix E.
    admittance : numpy.ndarray, shape (n, n)
        B = E diag(b) E'.
    pseudoinverse : numpy.ndarray, shape (n, n)
        Moore-Penrose inverse B+.
    ptdf : numpy.ndarray, shape (l, n)
        Power transfer distribution factors T_f = diag(b) E' B+.
    """

    b: np.ndarray
    incidence: np.ndarray
    admittance: np.ndarray
    pseudoinverse: np.ndarray
    ptdf: np.ndarray

    @property
    def n_buses(self) -> int:
        return self.admittance.shape[0]

    @property
    def n_lines(self) -> int:
        return self.incidence.shape[1]

    def angles(self, injection: np.ndarray) -> np.ndarray:
        """Voltage phase angles theta = B+ p (zero-mean gauge)."""
        return self.pseudoinverse @ injection


def build_operator(grid: Grid, b=None) -> NetworkOperator:
    """Build the network operator for grid at susceptances ``b`` (rated if None)."""
    if b is None:
        b = grid.rated_susceptance
    b = np.asarray(b, dtype=float)
    if b.shape != (grid.n_lines,):
        raise ValueError("susceptance vector length must equal the line count")
    if np.any(b <= 0):
        raise ValueError("susceptances must be positive")
    E = incidence_matrix(grid)
    B = (E * b) @ E.T
    n = grid.n_buses
    J = np.full((n, n), 1.0 / n)
    try:
        shifted_inv = scipy.linalg.inv(B + J, check_finite=False)
    except scipy.linalg.LinAlgError as exc:
        raise SingularNetwork("admittance matrix is singular beyond the rank-1 null space") from exc
    # guard against silently ill-conditioned (near-disconnected) cases
    if not np.all(np.isfinite(shifted_inv)):
        raise SingularNetwork("admittance matrix is singular beyond the rank-1 null space")
    B_dagger = shifted_inv - J
    # symmetrize away factorization round-off
    B_dagger = 0.5 * (B_dagger + B_dagger.T)
    T_f = (b[:, None] * E.T) @ B_dagger
    for a in (b, E, B, B_dagger, T_f):
        a.setflags(write=False)
    return NetworkOperator(b=b, incidence=E, admittance=B, pseudoinverse=B_dagger, ptdf=T_f)


def line_flows(op: NetworkOperator, injection: np.ndarray) -> np.ndarray:
    """Line flows f = T_f p for a balanced injection p."""
    injection = np.asarray(injection, dtype=float)
    if abs(injection.sum()) > BALANCE_TOL:
        raise UnbalancedInjection(f"injection sums to {injection.sum():.3e}")
    return op.ptdf @ injection


def d_pseudoinverse_db(op: NetworkOperator, wrt_line: int) -> np.ndarray:
    """dB+/db_km = -B+ E_km E_km' B+ for line km = ``wrt_line``."""
    u = op.pseudoinverse @ op.incidence[:, wrt_line]
    return -np.outer(u, u)


def d_ptdf_row_db(op: NetworkOperator, row_line: int, wrt_line: int) -> np.ndarray:
    """Derivative of the PTDF row of ``row_line`` w.r.t. the susceptance of ``wrt_line``.

    dT_ij/db_km = b_ij E_ij' dB+/db_km, plus an extra E_ij' B+ term when
    (i,j) = (k,m) because b_ij then also appears as the leading factor.
    """
    e_row = op.incidence[:, row_line]
    grad = op.b[row_line] * (e_row @ d_pseudoinverse_db(op, wrt_line))
    if row_line == wrt_line:
        grad = grad + e_row @ op.pseudoinverse
    return grad


def d_baseflow_db(op: NetworkOperator, injection: np.ndarray, row_line: int, wrt_line: int) -> float:
    """Derivative of the base-case flow on ``row_line`` w.r.t. b of ``wrt_line``."""
    injection = np.asarray(injection, dtype=float)
    if abs(injection.sum()) > BALANCE_TOL:
        raise UnbalancedInjection(f"injection sums to {injection.sum():.3e}")
    return float(d_ptdf_row_db(op, row_line, wrt_line) @ injection)
