"""External potentials V and their exact dual-cell weights.

The discrete potential energy is ``sum_{e,j} w[e, j] |v[e, j]|^2`` where
``w[e, j]`` is the integral of V over the dual cell of node j
(``[0, h/2]`` at the vertex, ``[x_j - h/2, x_j + h/2]`` inside,
``[L - h/2, L]`` at the truncation node).  For the inverse-power law the
integral uses the antiderivative, so the x -> 0 singularity is never sampled.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.typing import NDArray

from .grid import GraphFunction, GraphGrid

ZERO = "zero"
INVERSE_POWER = "inverse_power"
TABULATED = "tabulated"


class UnsupportedPotentialError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Potential:
    """V on the star graph.

    kind is one of ``"zero"``, ``"inverse_power"`` (V = -beta x^-alpha) or
    ``"tabulated"`` (per-edge samples, linearly interpolated, zero past the
    last abscissa).
    """

    kind: str = ZERO
    beta: float = 0.0
    alpha: float = 0.0
    tables: tuple = field(default=(), repr=False)

    def __post_init__(self):
        if self.kind == INVERSE_POWER:
            if not self.beta > 0:
                raise ValueError(f"inverse-power potential needs beta > 0, got {self.beta}")
            if not 0 < self.alpha < 1:
                raise ValueError(f"inverse-power potential needs 0 < alpha < 1, got {self.alpha}")
        elif self.kind == TABULATED:
            if not self.tables:
                raise ValueError("tabulated potential needs at least one table")
            for x, v in self.tables:
                if x[0] != 0 or np.any(np.diff(x) <= 0):
                    raise ValueError("tabulated x must start at 0 and increase strictly")
        elif self.kind != ZERO:
            raise ValueError(f"unknown potential kind {self.kind!r}")

    @classmethod
    def zero(cls) -> "Potential":
        return cls(ZERO)

    @classmethod
    def inverse_power(cls, beta: float, alpha: float) -> "Potential":
        return cls(INVERSE_POWER, float(beta), float(alpha))

    @classmethod
    def tabulated(cls, tables, allow_positive: bool = False) -> "Potential":
        """``tables`` is a list of (x, V) pairs: one per edge, or a single
        pair shared by all edges.

        Positive entries are rejected unless ``allow_positive`` (used only to
        exercise the diagnostics).
        """
        frozen = []
        for x, v in tables:
            x = np.array(x, dtype=float)
            v = np.array(v, dtype=float)
            if x.shape != v.shape:
                raise ValueError("x and V columns differ in length")
            if not allow_positive and np.any(v > 0):
                raise ValueError("tabulated potential must be <= 0 everywhere")
            x.flags.writeable = False
            v.flags.writeable = False
            frozen.append((x, v))
        return cls(TABULATED, tables=tuple(frozen))

    @classmethod
    def load_tables(cls, paths, allow_positive: bool = False) -> "Potential":
        """Read two-column (x, V) text files, one per edge."""
        if isinstance(paths, (str, Path)):
            paths = [paths]
        tables = []
        for path in paths:
            data = np.loadtxt(path, ndmin=2)
            tables.append((data[:, 0], data[:, 1]))
        return cls.tabulated(tables, allow_positive=allow_positive)

    @property
    def symmetric(self) -> bool:
        return self.kind != TABULATED or len(self.tables) == 1

    @property
    def has_xvprime(self) -> bool:
        return self.kind in (ZERO, INVERSE_POWER)

    def __call__(self, x):
        """Pointwise V(x) (same on all edges; first table for tabulated)."""
        x = np.asarray(x, dtype=float)
        if self.kind == ZERO:
            return np.zeros_like(x)
        if self.kind == INVERSE_POWER:
            with np.errstate(divide="ignore"):
                return -self.beta * x ** (-self.alpha)
        tx, tv = self.tables[0]
        return np.interp(x, tx, tv, right=0.0)

    def xvprime(self, x):
        """Pointwise x V'(x)."""
        if self.kind == TABULATED:
            raise UnsupportedPotentialError("tabulated potentials carry no derivative data")
        return -self.alpha * self(x)

    def describe(self) -> dict:
        if self.kind == INVERSE_POWER:
            return {"kind": self.kind, "beta": self.beta, "alpha": self.alpha}
        if self.kind == TABULATED:
            return {"kind": self.kind, "n_tables": len(self.tables)}
        return {"kind": self.kind}


def _dual_cell_edges(grid: GraphGrid) -> NDArray:
    """Boundaries 0, h/2, 3h/2, ..., L - h/2, L of the nodal dual cells."""
    m, h = grid.cells_per_edge, grid.spacing
    b = np.empty(m + 2)
    b[0] = 0.0
    b[1:-1] = (np.arange(m) + 0.5) * h
    b[-1] = grid.edge_length
    return b


_weight_cache: dict = {}


def cell_average_V(p: Potential, grid: GraphGrid) -> NDArray:
    """Dual-cell integrals of V, shape (n_stored, M+1).

    Despite the name the entries are integrals (average times dual-cell
    length), ready to be contracted with |v|^2.
    """
    key = (id(p), grid)
    hit = _weight_cache.get(key)
    if hit is not None and hit[0] is p:
        return hit[1]
    w = _compute_weights(p, grid)
    w.flags.writeable = False
    _weight_cache[key] = (p, w)
    return w


def _compute_weights(p: Potential, grid: GraphGrid) -> NDArray:
    shape = (grid.n_stored, grid.cells_per_edge + 1)
    if p.kind == ZERO:
        return np.zeros(shape)
    if p.kind == INVERSE_POWER:
        b = _dual_cell_edges(grid)
        anti = -p.beta * b ** (1.0 - p.alpha) / (1.0 - p.alpha)
        return np.broadcast_to(np.diff(anti), shape).copy()
    tables = p.tables
    if len(tables) == 1:
        tables = tables * grid.n_stored
    if len(tables) != grid.n_stored:
        raise ValueError(f"{len(tables)} tables for {grid.n_stored} stored edges")
    out = np.empty(shape)
    for e, (tx, tv) in enumerate(tables):
        out[e] = np.interp(grid.x, tx, tv, right=0.0) * grid.trapezoid_weights
    return out


def cell_average_xVprime(p: Potential, grid: GraphGrid) -> NDArray:
    """Dual-cell integrals of x V'(x), shape (n_stored, M+1)."""
    if p.kind == TABULATED:
        raise UnsupportedPotentialError("tabulated potentials carry no derivative data")
    if p.kind == ZERO:
        return np.zeros((grid.n_stored, grid.cells_per_edge + 1))
    # x V' = -alpha V for power laws, so the exact integrals follow directly
    return -p.alpha * cell_average_V(p, grid)


def potential_energy(u: GraphFunction, p: Potential) -> float:
    """(Vu, u)_2 with the exact dual-cell weights."""
    w = cell_average_V(p, u.grid)
    return float(u.grid.multiplicity * np.sum(w * np.abs(u.nodal()) ** 2))


def virial_potential_term(u: GraphFunction, p: Potential) -> float:
    """int x V'(x) |u|^2 dx."""
    w = cell_average_xVprime(p, u.grid)
    return float(u.grid.multiplicity * np.sum(w * np.abs(u.nodal()) ** 2))


@dataclass
class AssumptionReport:
    tail_max_abs: list
    sign_violations: int
    has_xvprime: bool

    @property
    def ok(self) -> bool:
        return self.sign_violations == 0


def check_assumptions(p: Potential, grid: GraphGrid) -> AssumptionReport:
    """Decay on the last 10% of each edge, sign, and derivative availability."""
    x = grid.x
    tail = x >= 0.9 * grid.edge_length
    tail_max = []
    violations = 0
    if p.kind == TABULATED:
        tables = p.tables if len(p.tables) > 1 else p.tables * grid.n_stored
        for tx, tv in tables:
            vals = np.interp(x, tx, tv, right=0.0)
            tail_max.append(float(np.max(np.abs(vals[tail]))))
            violations += int(np.sum(tv > 0))
    else:
        vals = p(x[1:])
        tail_max = [float(np.max(np.abs(p(x[tail]))))] * grid.n_stored
        violations = int(np.sum(vals > 0))
    return AssumptionReport(tail_max, violations, p.has_xvprime)
