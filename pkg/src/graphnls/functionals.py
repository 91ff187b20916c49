"""Energy, action, Nehari and Pohozaev functionals, scaling, solitons, gamma*.

All functionals are assembled from the same discrete pieces:

* ``kinetic``  -- ||u'||^2 from forward differences,
* ``potential_energy`` -- (Vu, u) from exact dual-cell weights,
* the vertex term gamma |u(0)|^2,
* ``lp_power`` -- trapezoidal ||u||_q^q,

so that F(u) equals the quadratic form of the assembled stiffness matrix.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import integrate
from scipy.interpolate import CubicSpline

from .grid import (GraphFunction, GraphGrid, inner_h1, inner_l2, kinetic,
                   lp_power, norm_h1)
from .potentials import (Potential, potential_energy, virial_potential_term)
from .spectral import Hamiltonian, assemble


class NehariError(ValueError):
    """The quadratic part F + omega ||.||^2 is not positive (omega <= omega_0)."""


@dataclass(frozen=True, eq=False)
class ModelParams:
    gamma: float
    omega: float
    p: float
    grid: GraphGrid
    potential: Potential = field(default_factory=Potential.zero)

    def __post_init__(self):
        if not self.p > 1:
            raise ValueError(f"nonlinearity power p must exceed 1, got {self.p}")

    @cached_property
    def hamiltonian(self) -> Hamiltonian:
        return assemble(self.grid, self.potential, self.gamma)

    def with_(self, **changes) -> "ModelParams":
        kw = dict(gamma=self.gamma, omega=self.omega, p=self.p, grid=self.grid,
                  potential=self.potential)
        kw.update(changes)
        return ModelParams(**kw)


def quadratic_form(u: GraphFunction, P: ModelParams) -> float:
    """F_{gamma,V}(u) = ||u'||^2 - gamma |u(0)|^2 + (Vu, u)."""
    return kinetic(u) - P.gamma * abs(u.vertex_value) ** 2 + potential_energy(u, P.potential)


def energy(u: GraphFunction, P: ModelParams) -> float:
    return 0.5 * quadratic_form(u, P) - lp_power(u, P.p + 1) / (P.p + 1)


def charge(u: GraphFunction) -> float:
    return inner_l2(u, u).real


def action(u: GraphFunction, P: ModelParams) -> float:
    return energy(u, P) + 0.5 * P.omega * charge(u)


def nehari(u: GraphFunction, P: ModelParams) -> float:
    return quadratic_form(u, P) + P.omega * charge(u) - lp_power(u, P.p + 1)


def pohozaev(u: GraphFunction, P: ModelParams) -> float:
    """P(u) = ||u'||^2 - 1/2 int x V' |u|^2 - gamma/2 |u(0)|^2 - (p-1)/(2(p+1)) ||u||^{p+1}."""
    p = P.p
    return (kinetic(u) - 0.5 * virial_potential_term(u, P.potential)
            - 0.5 * P.gamma * abs(u.vertex_value) ** 2
            - (p - 1) / (2 * (p + 1)) * lp_power(u, p + 1))


def scale(u: GraphFunction, lam: float) -> GraphFunction:
    """u^lam(x) = lam^{1/2} u(lam x), edge by edge, zero beyond the grid.

    Each edge is resampled through a cubic spline of its nodal values (not
    linear interpolation: the O(h^2) error of the latter jumps as nodes
    cross cells, which ruins finite differences in lam).
    """
    if not lam > 0:
        raise ValueError(f"scale needs lam > 0, got {lam}")
    if lam == 1:
        return u
    g = u.grid
    x = g.x
    nod = u.nodal()
    y = lam * x
    inside = y <= g.edge_length
    out = np.zeros_like(nod)
    for e in range(g.n_stored):
        spline = CubicSpline(x, nod[e], bc_type="not-a-knot")
        out[e, inside] = spline(y[inside])
    out *= np.sqrt(lam)
    out[:, 0] = out[0, 0]
    return GraphFunction.from_nodal(g, out)


def nehari_projection(u: GraphFunction, P: ModelParams):
    """Return (lam1, lam1 * u) with I_omega(lam1 u) = 0."""
    quad = quadratic_form(u, P) + P.omega * charge(u)
    nl = lp_power(u, P.p + 1)
    if not quad > 0:
        raise NehariError(f"F + omega||u||^2 = {quad:.3g} <= 0; omega is not above omega_0")
    if not nl > 0:
        raise NehariError("cannot project the zero function")
    lam1 = (quad / nl) ** (1.0 / (P.p - 1))
    return lam1, u * lam1


def soliton_profile(x, omega: float, p: float, shift: float):
    """((p+1) omega / 2 sech^2((p-1) sqrt(omega) x / 2 + shift))^{1/(p-1)}."""
    arg = 0.5 * (p - 1) * np.sqrt(omega) * np.asarray(x) + shift
    e = np.exp(-2.0 * np.abs(arg))
    sech2 = 4.0 * e / (1.0 + e) ** 2  # no overflow in cosh for large arguments
    return (0.5 * (p + 1) * omega * sech2) ** (1.0 / (p - 1))


def soliton_shift(gamma: float, n_edges: int, omega: float) -> float:
    a = gamma / (n_edges * np.sqrt(omega))
    if abs(a) >= 1:
        raise ValueError(f"|gamma| = {abs(gamma)} must be below N sqrt(omega) = "
                         f"{n_edges * np.sqrt(omega)}")
    return float(np.arctanh(a))


def explicit_soliton_symmetric(P: ModelParams) -> GraphFunction:
    """Edge-symmetric closed-form solution of the potential-free problem."""
    shift = soliton_shift(P.gamma, P.grid.n_edges, P.omega)
    return GraphFunction.from_callable(
        P.grid, lambda x: soliton_profile(x, P.omega, P.p, shift))


def _gamma_star_integral(lo: float, p: float) -> float:
    val, _ = integrate.quad(lambda t: (1.0 - t * t) ** (2.0 / (p - 1)), lo, 1.0,
                            epsabs=1e-14, epsrel=1e-13, limit=200)
    return val


def gamma_star(p: float, n_edges: int, omega: float, tol: float = 1e-13) -> float:
    """Coupling threshold gamma* for the potential-free star graph.

    Solves int_0^1 (1-t^2)^{2/(p-1)} dt = N/2 int_a^1 (1-t^2)^{2/(p-1)} dt for
    a in [0, 1) by bisection and returns a N sqrt(omega).
    """
    if not p > 1 or n_edges < 2 or not omega > 0:
        raise ValueError("gamma_star needs p > 1, N >= 2, omega > 0")
    full = _gamma_star_integral(0.0, p)

    def excess(a):
        return 0.5 * n_edges * _gamma_star_integral(a, p) - full

    lo, hi = 0.0, 1.0
    if excess(lo) <= 0:
        # N = 2: the equation holds at a = 0
        assert abs(excess(lo)) < 1e-12
        return 0.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if excess(mid) > 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi) * n_edges * np.sqrt(omega)


def orbital_distance(u: GraphFunction, phi: GraphFunction):
    """min over theta of ||u - e^{i theta} phi||_{H^1}; returns (theta, dist)."""
    pairing = inner_h1(u, phi)
    theta = float(np.angle(pairing)) if pairing != 0 else 0.0
    # direct norm: expanding the square cancels catastrophically near the orbit
    return theta, float(norm_h1(u - phi * np.exp(1j * theta)))
