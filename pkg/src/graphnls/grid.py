"""Truncated star-graph grids, sampled graph functions and their quadratures.

Every edge is the interval [0, L] split into M cells of width h = L/M.  Node 0
of all edges is the shared vertex, node M carries a homogeneous Dirichlet
condition.  Unknowns are stored as one flat vector::

    [v(0), v_1[1..M-1], v_2[1..M-1], ...]

Quadratures are the trapezoidal rule on nodes and forward differences on
cells, i.e. P1 finite elements with a lumped mass matrix.

A grid built with ``symmetric=True`` stores a single edge that stands for all
``n_edges`` identical edges; every edge sum is multiplied by ``multiplicity``
so that all integrals still refer to the full graph.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Callable

import numpy as np
from numpy.typing import ArrayLike, NDArray


class GridMismatchError(ValueError):
    """Two graph functions live on different grids."""


@dataclass(frozen=True)
class GraphGrid:
    n_edges: int
    edge_length: float
    cells_per_edge: int
    symmetric: bool = False

    def __post_init__(self):
        if int(self.n_edges) != self.n_edges or self.n_edges < 2:
            raise ValueError(f"a star graph needs n_edges >= 2, got {self.n_edges}")
        if not self.edge_length > 0:
            raise ValueError(f"edge_length must be positive, got {self.edge_length}")
        if int(self.cells_per_edge) != self.cells_per_edge or self.cells_per_edge < 4:
            raise ValueError(f"cells_per_edge must be an integer >= 4, got {self.cells_per_edge}")
        object.__setattr__(self, "n_edges", int(self.n_edges))
        object.__setattr__(self, "cells_per_edge", int(self.cells_per_edge))
        object.__setattr__(self, "edge_length", float(self.edge_length))

    @property
    def spacing(self) -> float:
        return self.edge_length / self.cells_per_edge

    h = spacing

    @property
    def n_stored(self) -> int:
        """Number of edges actually stored (1 in symmetric mode)."""
        return 1 if self.symmetric else self.n_edges

    @property
    def multiplicity(self) -> int:
        """How many physical edges each stored edge represents."""
        return self.n_edges if self.symmetric else 1

    @property
    def n_dof(self) -> int:
        return 1 + self.n_stored * (self.cells_per_edge - 1)

    @cached_property
    def x(self) -> NDArray[np.float64]:
        """Node coordinates 0, h, ..., L (shared by all edges)."""
        x = np.arange(self.cells_per_edge + 1) * self.spacing
        x[-1] = self.edge_length
        x.flags.writeable = False
        return x

    @cached_property
    def x_mid(self) -> NDArray[np.float64]:
        xm = (np.arange(self.cells_per_edge) + 0.5) * self.spacing
        xm.flags.writeable = False
        return xm

    @cached_property
    def trapezoid_weights(self) -> NDArray[np.float64]:
        """Per-edge nodal trapezoid weights (length M+1), not yet multiplied."""
        w = np.full(self.cells_per_edge + 1, self.spacing)
        w[0] = w[-1] = 0.5 * self.spacing
        w.flags.writeable = False
        return w

    @cached_property
    def lumped_mass(self) -> NDArray[np.float64]:
        """Diagonal of the lumped mass matrix over the unknowns."""
        m = self.multiplicity
        mass = np.empty(self.n_dof)
        mass[0] = 0.5 * self.spacing * self.n_edges
        mass[1:] = self.spacing * m
        mass.flags.writeable = False
        return mass

    def symmetric_reduction(self) -> "GraphGrid":
        return GraphGrid(self.n_edges, self.edge_length, self.cells_per_edge, symmetric=True)

    def full(self) -> "GraphGrid":
        return GraphGrid(self.n_edges, self.edge_length, self.cells_per_edge, symmetric=False)


def make_grid(n_edges: int, edge_length: float, cells_per_edge: int,
              symmetric: bool = False) -> GraphGrid:
    return GraphGrid(n_edges, edge_length, cells_per_edge, symmetric)


class GraphFunction:
    """Immutable sampled function on a :class:`GraphGrid`.

    Continuity at the vertex is structural: only one vertex value is stored.
    Real-valued functions keep a float dtype, so ``is_real`` is exact.
    """

    __slots__ = ("grid", "values")

    def __init__(self, grid: GraphGrid, values: ArrayLike):
        values = np.array(values, copy=True)
        if values.shape != (grid.n_dof,):
            raise ValueError(f"expected {grid.n_dof} values, got shape {values.shape}")
        if not np.iscomplexobj(values):
            values = values.astype(np.float64)
        values.flags.writeable = False
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "values", values)

    def __setattr__(self, name, value):
        raise AttributeError("GraphFunction is immutable")

    # construction ------------------------------------------------------
    @classmethod
    def zeros(cls, grid: GraphGrid, dtype=np.float64) -> "GraphFunction":
        return cls(grid, np.zeros(grid.n_dof, dtype=dtype))

    @classmethod
    def from_nodal(cls, grid: GraphGrid, nodal: ArrayLike) -> "GraphFunction":
        """Build from an (n_stored, M+1) array; column 0 must agree across edges.

        The last column is ignored (Dirichlet node).
        """
        nodal = np.asarray(nodal)
        if nodal.ndim == 1:
            nodal = np.broadcast_to(nodal, (grid.n_stored, nodal.size))
        if nodal.shape != (grid.n_stored, grid.cells_per_edge + 1):
            raise ValueError(f"nodal array has shape {nodal.shape}")
        v0 = nodal[:, 0]
        if not np.allclose(v0, v0[0], rtol=1e-12, atol=1e-14):
            raise ValueError("vertex values disagree between edges")
        values = np.concatenate([v0[:1], nodal[:, 1:-1].ravel()])
        return cls(grid, values)

    @classmethod
    def from_callable(cls, grid: GraphGrid,
                      f: Callable[[NDArray], ArrayLike] | list) -> "GraphFunction":
        """Sample ``f(x)`` on every edge (or ``f[e](x)`` per edge if a list)."""
        x = grid.x
        if callable(f):
            nodal = np.broadcast_to(np.asarray(f(x)), (grid.n_stored, x.size))
        else:
            if len(f) != grid.n_stored:
                raise ValueError("need one callable per stored edge")
            nodal = np.stack([np.asarray(fe(x)) for fe in f])
        return cls.from_nodal(grid, nodal)

    # views ---------------------------------------------------------------
    @property
    def vertex_value(self):
        return self.values[0]

    @property
    def interior(self) -> NDArray:
        return self.values[1:].reshape(self.grid.n_stored, self.grid.cells_per_edge - 1)

    @property
    def is_real(self) -> bool:
        return not np.iscomplexobj(self.values)

    def nodal(self) -> NDArray:
        """(n_stored, M+1) array including the vertex column and the Dirichlet zero."""
        g = self.grid
        out = np.zeros((g.n_stored, g.cells_per_edge + 1), dtype=self.values.dtype)
        out[:, 0] = self.values[0]
        out[:, 1:-1] = self.interior
        return out

    def edge(self, e: int) -> NDArray:
        return self.nodal()[e]

    def to_full(self) -> "GraphFunction":
        """Fan a symmetric-mode function out to all edges of the full grid."""
        if not self.grid.symmetric:
            return self
        full = self.grid.full()
        return GraphFunction.from_nodal(full, np.repeat(self.nodal(), full.n_edges, axis=0))

    def to_symmetric(self) -> "GraphFunction":
        """Keep edge 0 only; the caller asserts the function is edge-symmetric."""
        if self.grid.symmetric:
            return self
        return GraphFunction.from_nodal(self.grid.symmetric_reduction(), self.nodal()[:1])

    # arithmetic ----------------------------------------------------------
    def _coerce(self, other):
        if isinstance(other, GraphFunction):
            _check_same_grid(self, other)
            return other.values
        return other

    def __add__(self, other):
        return GraphFunction(self.grid, self.values + self._coerce(other))

    __radd__ = __add__

    def __sub__(self, other):
        return GraphFunction(self.grid, self.values - self._coerce(other))

    def __rsub__(self, other):
        return GraphFunction(self.grid, self._coerce(other) - self.values)

    def __mul__(self, other):
        return GraphFunction(self.grid, self.values * self._coerce(other))

    __rmul__ = __mul__

    def __truediv__(self, c):
        return GraphFunction(self.grid, self.values / c)

    def __neg__(self):
        return GraphFunction(self.grid, -self.values)

    def __abs__(self):
        return GraphFunction(self.grid, np.abs(self.values))

    def conj(self) -> "GraphFunction":
        return GraphFunction(self.grid, np.conj(self.values))

    @property
    def real(self) -> "GraphFunction":
        return GraphFunction(self.grid, self.values.real)

    def __repr__(self):
        kind = "real" if self.is_real else "complex"
        return f"GraphFunction({kind}, N={self.grid.n_edges}, M={self.grid.cells_per_edge})"


def _check_same_grid(u: GraphFunction, v: GraphFunction) -> None:
    if u.grid != v.grid:
        raise GridMismatchError(f"{u.grid} != {v.grid}")


def _edge_sum(grid: GraphGrid, nodal_integrand: NDArray) -> complex | float:
    """Trapezoid rule for an (n_stored, M+1) nodal integrand, summed over edges."""
    return grid.multiplicity * np.sum(nodal_integrand @ grid.trapezoid_weights)


def inner_l2(u: GraphFunction, v: GraphFunction) -> complex:
    """(u, v)_2 = sum_e int u_e conj(v_e) dx, linear in u."""
    _check_same_grid(u, v)
    return complex(_edge_sum(u.grid, u.nodal() * np.conj(v.nodal())))


def norm_lp(u: GraphFunction, q: float) -> float:
    if q < 1:
        raise ValueError(f"norm_lp needs q >= 1, got {q}")
    return float(_edge_sum(u.grid, np.abs(u.nodal()) ** q)) ** (1.0 / q)


def lp_power(u: GraphFunction, q: float) -> float:
    """||u||_q^q without the final root."""
    return float(_edge_sum(u.grid, np.abs(u.nodal()) ** q))


def derivative(u: GraphFunction) -> NDArray:
    """Forward differences on every cell, shape (n_stored, M)."""
    return np.diff(u.nodal(), axis=1) / u.grid.spacing


def kinetic(u: GraphFunction) -> float:
    """||u'||_2^2, exact for the piecewise-linear interpolant."""
    d = derivative(u)
    return float(u.grid.multiplicity * u.grid.spacing * np.sum(np.abs(d) ** 2))


def x_weighted_norm2(u: GraphFunction) -> float:
    return float(_edge_sum(u.grid, (u.grid.x ** 2) * np.abs(u.nodal()) ** 2))


def momentum_form(u: GraphFunction) -> float:
    """Im sum_e int x conj(u) u_x dx with midpoint x and cell differences."""
    g = u.grid
    nod = u.nodal()
    mid = 0.5 * (nod[:, 1:] + nod[:, :-1])
    jump = np.diff(nod, axis=1)
    return float(g.multiplicity * np.sum(g.x_mid * np.imag(np.conj(mid) * jump)))


def inner_h1(u: GraphFunction, v: GraphFunction) -> complex:
    """(u, v)_{H^1} with the same forward-difference derivative as the form."""
    _check_same_grid(u, v)
    g = u.grid
    grad = g.multiplicity * g.spacing * np.sum(derivative(u) * np.conj(derivative(v)))
    return complex(grad) + inner_l2(u, v)


def norm_h1(u: GraphFunction) -> float:
    return float(np.sqrt(max(inner_h1(u, u).real, 0.0)))
