#!/usr/bin/python3
"""
Defines the discrete Helmholtz operator H(m) = omega^2 diag(m) + Laplacian and its solves.
- PDECounter: Thread-safe tally of forward and adjoint column solves.
- HelmholtzOperator: Assembled sparse matrix with a lazily cached LU factorization.
- boundary_sides: Number of absorbing edges touching each node.
- assemble: Builds H(m) for one angular frequency.
- solve: Solves H U = rhs, reusing the cached factorization.
- solve_adjoint: Solves H^H V = rhs with the same factorization.
- model_derivative: Diagonal of dH/dm used by the adjoint-state gradient.

The 5-point stencil uses z-fastest node ordering, so the bandwidth is nz.
Edges carry a first-order absorbing condition du/dn - i omega sqrt(m) u = 0; the
ghost node is eliminated as u_ghost = (1 + i omega h sqrt(m)) u_b, which keeps
H complex symmetric.
"""

from joint_fwi.core import ModelGrid, validate_model
from joint_fwi.constants import PIVOT_TOL
from joint_fwi.errors import SingularOperator, ShapeMismatch, BadShape

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

import logging
import threading
from typing import Optional


class PDECounter:
    """
    Counts PDE solves, one per right-hand-side column.
    """

    def __init__(self):
        self._lock = threading.Lock()
        self.forward = 0
        self.adjoint = 0

    def add(self, forward: int = 0, adjoint: int = 0) -> None:
        with self._lock:
            self.forward += forward
            self.adjoint += adjoint

    @property
    def total(self) -> int:
        return self.forward + self.adjoint

    def reset(self) -> None:
        with self._lock:
            self.forward = 0
            self.adjoint = 0


COUNTER = PDECounter()


class HelmholtzOperator:
    """
    H(m) for one omega. The LU factorization is computed on first solve and kept.

    - grid: Model the operator was assembled from.
    - omega: Angular frequency (rad/s).
    - matrix: CSC matrix of size n-by-n, n = nz*nx.
    - absorbing: Whether the edges carry the absorbing condition.
    - counter: Ledger that solves are charged to.
    """

    def __init__(self, grid: ModelGrid, omega: float, matrix: sp.csc_matrix, absorbing: bool,
                 counter: Optional[PDECounter] = None):
        self.grid = grid
        self.omega = float(omega)
        self.matrix = matrix
        self.absorbing = absorbing
        self.counter = COUNTER if counter is None else counter
        self._lu = None
        self._lock = threading.Lock()

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    @property
    def factorization(self):
        with self._lock:
            if self._lu is None:
                logging.debug("Factorizing H for omega=%r, n=%d", self.omega, self.n)
                try:
                    lu = splu(self.matrix)
                except RuntimeError as err:
                    raise SingularOperator("H is singular at omega=%r: %s" % (self.omega, err)) from err
                pivot = float(np.abs(lu.U.diagonal()).min())
                if pivot < PIVOT_TOL:
                    raise SingularOperator("pivot %.3e below %.0e at omega=%r" % (pivot, PIVOT_TOL, self.omega))
                self._lu = lu
            return self._lu

    def __matmul__(self, x: np.ndarray) -> np.ndarray:
        return self.matrix @ x


def boundary_sides(grid: ModelGrid) -> np.ndarray:
    """
    Returns, for each node, how many grid edges (0, 1 or 2) it touches.

    - grid: Model grid.
    """
    ix, iz = np.divmod(np.arange(grid.n), grid.nz)
    sides = (iz == 0).astype(int) + (iz == grid.nz - 1) + (ix == 0) + (ix == grid.nx - 1)
    return sides


def assemble(g: ModelGrid, omega: float, absorbing: bool = True,
             counter: Optional[PDECounter] = None) -> HelmholtzOperator:
    """
    Assembles H(m) = omega^2 diag(m) + Laplacian_h with absorbing (or zero) edges.

    - g: Validated model grid.
    - omega: Angular frequency, must be positive.
    - absorbing: False drops the absorbing terms, leaving a real symmetric matrix.
    - counter: Ledger for solves; defaults to the module ledger.
    """
    validate_model(g)
    if not omega > 0:
        raise BadShape("omega must be positive, got %r" % omega)
    logging.debug("Assembling H: nz=%d, nx=%d, h=%r, omega=%r", g.nz, g.nx, g.h, omega)
    nz, nx, n = g.nz, g.nx, g.n
    inv_h2 = 1.0 / g.h**2
    nodes = np.arange(n)
    ix, iz = np.divmod(nodes, nz)
    diagonal = (omega**2 * g.m - 4.0 * inv_h2).astype(np.complex128)
    if absorbing:
        sides = boundary_sides(g)
        diagonal += sides * (inv_h2 + 1j * omega * np.sqrt(g.m) / g.h)
    rows, cols = [nodes], [nodes]
    values = [diagonal]
    # z neighbors sit at +-1, x neighbors at +-nz
    for keep, step in ((iz < nz - 1, 1), (iz > 0, -1), (ix < nx - 1, nz), (ix > 0, -nz)):
        src = nodes[keep]
        rows.append(src)
        cols.append(src + step)
        values.append(np.full(src.size, inv_h2, dtype=np.complex128))
    matrix = sp.csc_matrix(
        (np.concatenate(values), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    )
    return HelmholtzOperator(g, omega, matrix, absorbing, counter)


def _as_block(H: HelmholtzOperator, rhs: np.ndarray) -> np.ndarray:
    rhs = np.asarray(rhs, dtype=np.complex128)
    if rhs.shape[0] != H.n:
        raise ShapeMismatch("rhs has %d rows, operator has %d" % (rhs.shape[0], H.n))
    return rhs


def solve(H: HelmholtzOperator, rhs: np.ndarray) -> np.ndarray:
    """
    Returns U with H U = rhs; each column counts as one forward PDE solve.

    - H: Operator; its factorization is created on first use.
    - rhs: n-vector or n-by-s block.
    """
    rhs = _as_block(H, rhs)
    columns = 1 if rhs.ndim == 1 else rhs.shape[1]
    H.counter.add(forward=columns)
    return H.factorization.solve(rhs)


def solve_adjoint(H: HelmholtzOperator, rhs: np.ndarray) -> np.ndarray:
    """
    Returns V with H^H V = rhs, reusing the LU of H; counted as adjoint solves.

    - H: Operator.
    - rhs: n-vector or n-by-s block.
    """
    rhs = _as_block(H, rhs)
    columns = 1 if rhs.ndim == 1 else rhs.shape[1]
    H.counter.add(adjoint=columns)
    # H^H v = r  <=>  H^T conj(v) = conj(r)
    return np.conj(H.factorization.solve(np.conj(rhs), trans="T"))


def model_derivative(H: HelmholtzOperator) -> np.ndarray:
    """
    Returns d(diag H)/dm per node: omega^2, plus the absorbing-term slope on edges.

    - H: Operator whose grid and omega define the derivative.
    """
    g = H.grid
    derivative = np.full(g.n, H.omega**2, dtype=np.complex128)
    if H.absorbing:
        derivative += boundary_sides(g) * 1j * H.omega / (2.0 * g.h * np.sqrt(g.m))
    return derivative
