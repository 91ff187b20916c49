"""Discrete operator H_{gamma,V} assembled from its quadratic form.

The stiffness matrix K satisfies ``v^H K v = ||v'||^2 - gamma |v(0)|^2 + (Vv, v)``
exactly for the stored unknowns; the vertex row is the weak Kirchhoff-delta
condition.  The generalized problem K psi = lam M psi (M lumped mass) gives
the spectrum; its lowest eigenvalue is -omega_0.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .grid import GraphFunction, GraphGrid, norm_lp
from .potentials import Potential, cell_average_V

log = logging.getLogger(__name__)


class ConvergenceError(RuntimeError):
    def __init__(self, msg, last_value=None, iterations=None):
        super().__init__(msg)
        self.last_value = last_value
        self.iterations = iterations


def _laplacian_and_potential(grid: GraphGrid, weights):
    """Assemble sum_cells |dv|^2/h + sum_nodes w |v|^2 in COO form."""
    m = grid.cells_per_edge
    h = grid.spacing
    mult = grid.multiplicity
    rows, cols, vals = [], [], []
    # node index map for one edge: node j -> dof, Dirichlet node M -> -1
    for e in range(grid.n_stored):
        idx = np.empty(m + 1, dtype=np.int64)
        idx[0] = 0
        idx[1:m] = 1 + e * (m - 1) + np.arange(m - 1)
        idx[m] = -1
        a, b = idx[:-1], idx[1:]
        k = mult / h
        for r, c, v in ((a, a, k), (b, b, k), (a, b, -k), (b, a, -k)):
            keep = (r >= 0) & (c >= 0)
            rows.append(r[keep])
            cols.append(c[keep])
            vals.append(np.full(keep.sum(), v))
        keep = idx >= 0
        rows.append(idx[keep])
        cols.append(idx[keep])
        vals.append(mult * weights[e][keep])
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    vals = np.concatenate(vals)
    return rows, cols, vals


@dataclass(frozen=True, eq=False)
class Hamiltonian:
    grid: GraphGrid
    potential: Potential
    gamma: float
    stiffness: sp.csr_matrix
    mass: np.ndarray

    def form(self, u: GraphFunction) -> float:
        v = u.values
        return float(np.real(np.vdot(v, self.stiffness @ v)))

    def apply(self, u: GraphFunction) -> GraphFunction:
        """Strong-form action M^{-1} K u."""
        return GraphFunction(self.grid, (self.stiffness @ u.values) / self.mass)

    def dump_coo(self, path) -> None:
        """Write the stiffness matrix as 'row col value' lines (upper+lower)."""
        coo = self.stiffness.tocoo()
        order = np.lexsort((coo.col, coo.row))
        data = np.column_stack([coo.row[order], coo.col[order], coo.data[order]])
        np.savetxt(Path(path), data, fmt=["%d", "%d", "%.17g"])


def assemble(grid: GraphGrid, pot: Potential, gamma: float) -> Hamiltonian:
    weights = cell_average_V(pot, grid)
    rows, cols, vals = _laplacian_and_potential(grid, weights)
    rows = np.append(rows, 0)
    cols = np.append(cols, 0)
    vals = np.append(vals, -float(gamma))
    k = sp.coo_matrix((vals, (rows, cols)), shape=(grid.n_dof, grid.n_dof)).tocsr()
    k.sum_duplicates()
    # symmetrize bit-exactly: duplicates are summed in the same order for (i,j), (j,i)
    k = ((k + k.T) * 0.5).tocsr()
    return Hamiltonian(grid, pot, float(gamma), k, np.asarray(grid.lumped_mass))


def _gershgorin(H: Hamiltonian):
    s = 1.0 / np.sqrt(H.mass)
    a = (sp.diags(s) @ H.stiffness @ sp.diags(s)).tocsr()
    diag = a.diagonal()
    off = np.asarray(abs(a).sum(axis=1)).ravel() - np.abs(diag)
    return float(np.min(diag - off)), float(np.max(diag + off))


def form_lower_bound(H: Hamiltonian) -> float:
    """Gershgorin bound for the smallest eigenvalue of M^{-1/2} K M^{-1/2}."""
    return _gershgorin(H)[0]


def count_below(H: Hamiltonian, sigma: float) -> int:
    """Number of eigenvalues of K psi = lam M psi below ``sigma``.

    Sylvester inertia of K - sigma M via LDL^T elimination on the star
    (each edge from the Dirichlet end towards the vertex, no fill-in).
    """
    g = H.grid
    m = g.cells_per_edge
    diag = H.stiffness.diagonal() - sigma * H.mass
    off = -g.multiplicity / g.spacing
    a = diag[1:].reshape(g.n_stored, m - 1)
    negatives = 0
    d = a[:, -1].copy()
    negatives += int(np.sum(d < 0))
    for j in range(m - 3, -1, -1):
        d = a[:, j] - off * off / d
        negatives += int(np.sum(d < 0))
    d0 = diag[0] - np.sum(off * off / d)
    return negatives + int(d0 < 0)


@dataclass
class SpectralResult:
    omega0: float
    psi0: GraphFunction
    gap: float  # Ritz estimate, an upper bound on the true gap
    iterations: int
    second: float = np.nan  # second Ritz value: an upper bound on lam_1 only


def _rayleigh_ritz(K, mass, X):
    """Rayleigh-Ritz on span(X): returns Ritz values and M-orthonormal vectors."""
    A = X.T @ (K @ X)
    B = X.T @ (mass[:, None] * X)
    A = 0.5 * (A + A.T)
    B = 0.5 * (B + B.T)
    theta, C = sla.eigh(A, B)
    return theta, X @ C


def ground_eigenpair(H: Hamiltonian, tol: float = 1e-10, max_iter: int = 2000,
                     x0: np.ndarray | None = None) -> SpectralResult:
    """Lowest eigenpair by shifted inverse subspace iteration (block of 2).

    The shift starts at the Gershgorin bound minus one, which is below the
    spectrum.  Once the residual norm ``r`` is small against the Ritz gap the
    shift moves up to ``theta - 2 r`` (still below lam_0 by the Kato-Temple
    bound, with ``theta_1 - r_1`` standing in for a lower bound on lam_1) whenever that at least halves its distance to the Ritz value;
    each move refactorizes.  Convergence needs Ritz increments below ``tol`` and a
    residual below ``sqrt(tol)`` (eigenvalue error ~ r^2 / gap), both floored
    at the rounding level of the operator norm (~1/h^2).
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    K = H.stiffness.tocsc()
    mass = H.mass
    n = K.shape[0]
    lower, upper = _gershgorin(H)
    sigma = lower - 1.0
    # Ritz values and residuals cannot resolve below eps * ||M^-1 K||
    noise = 100 * np.finfo(float).eps * max(abs(lower), abs(upper))
    lu = spla.splu((K - sp.diags(sigma * mass)).tocsc())
    rng = np.random.default_rng(0)
    X = np.empty((n, 2))
    X[:, 0] = np.ones(n) if x0 is None else x0
    X[:, 1] = rng.standard_normal(n)
    theta, X = _rayleigh_ritz(K, mass, X)
    last = theta[0]
    for it in range(1, max_iter + 1):
        Y = lu.solve(mass[:, None] * X)
        theta, X = _rayleigh_ritz(K, mass, Y)
        x = X[:, 0]
        res = K @ x - theta[0] * mass * x
        r = np.sqrt(np.dot(res / mass, res))
        scale = max(1.0, abs(theta[0]))
        if (abs(theta[0] - last) < max(tol * scale, noise)
                and r < max(np.sqrt(tol) * scale, noise)):
            break
        target = theta[0] - max(2.0 * r, 1e-3 * scale)
        if theta[0] - target < 0.5 * (theta[0] - sigma) and count_below(H, target) == 0:
            sigma = target
            lu = spla.splu((K - sp.diags(sigma * mass)).tocsc())
        last = theta[0]
    else:
        raise ConvergenceError(f"inverse iteration did not converge in {max_iter} steps",
                               last_value=theta[0], iterations=max_iter)
    psi = X[:, 0]
    if psi[0] < 0 or (psi[0] == 0 and psi.sum() < 0):
        psi = -psi
    # single-vector polish: with sigma < lam_0 the shifted matrix is an
    # M-matrix, so this also removes sign noise in the far tail
    for _ in range(3):
        psi = lu.solve(mass * np.maximum(psi, 0.0))
        psi /= np.sqrt(np.dot(psi * mass, psi))
    f = GraphFunction(H.grid, psi)
    f = f / norm_lp(f, 2)
    if np.min(f.values) <= 0:
        log.warning("ground eigenvector is not strictly positive (min %.3g)", np.min(f.values))
    log.debug("ground eigenpair: lam=%.12g after %d iterations", theta[0], it)
    return SpectralResult(omega0=-float(theta[0]), psi0=f, gap=float(theta[1] - theta[0]),
                          iterations=it, second=float(theta[1]))
