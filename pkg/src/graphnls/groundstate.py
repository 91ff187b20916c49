"""Positive standing-wave profiles on the Nehari manifold and the
instability criterion built on them.
"""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .functionals import (ModelParams, NehariError, action, charge, energy,
                          explicit_soliton_symmetric, kinetic, nehari,
                          nehari_projection, pohozaev, scale, soliton_profile)
from .grid import GraphFunction, GraphGrid, lp_power
from .potentials import INVERSE_POWER, ZERO, Potential, potential_energy
from .spectral import ConvergenceError, ground_eigenpair

log = logging.getLogger(__name__)


class FrequencyError(ValueError):
    """omega does not exceed omega_0, so no Nehari minimizer exists."""


@dataclass
class GroundStateResult:
    profile: GraphFunction
    omega: float
    residual: float
    action_value: float
    nehari_value: float
    pohozaev_value: float
    criterion: float
    iterations: int
    newton_steps: int = 0
    omega0: float = float("nan")


def _gradient(v: np.ndarray, P: ModelParams) -> np.ndarray:
    """Dual-space gradient K v + omega M v - M |v|^{p-1} v."""
    H = P.hamiltonian
    return H.stiffness @ v + P.omega * H.mass * v - H.mass * np.abs(v) ** (P.p - 1) * v


def stationary_residual(u: GraphFunction, P: ModelParams) -> float:
    """|| H u + omega u - |u|^{p-1} u ||_2 in the discrete (lumped) L^2 norm."""
    g = _gradient(u.values, P)
    return float(np.sqrt(np.real(np.vdot(g, g / P.hamiltonian.mass))))


def dual_residual(u: GraphFunction, P: ModelParams) -> float:
    """Weak residual in the dual norm of (K + omega M): sqrt(r^H A^{-1} r).

    For sampled smooth solutions this is the consistency error, O(h^2),
    whereas the strong residual is dominated by the vertex row (O(h^1.5)).
    """
    H = P.hamiltonian
    r = _gradient(u.values, P)
    A = (H.stiffness + sp.diags(P.omega * H.mass)).tocsc()
    return float(np.sqrt(abs(np.vdot(r, spla.spsolve(A, r)))))


def residual_floor(u: GraphFunction, P: ModelParams) -> float:
    """Rounding-level size of the stationary residual at u (10 eps |terms|)."""
    H = P.hamiltonian
    x = np.abs(u.values)
    bound = abs(H.stiffness) @ x + H.mass * (abs(P.omega) * x + x ** P.p)
    return float(10 * np.finfo(float).eps * np.sqrt(np.dot(bound, bound / H.mass)))


def _initial_guess(P: ModelParams) -> GraphFunction:
    n = P.grid.n_edges
    if abs(P.gamma) < n * np.sqrt(P.omega):
        return explicit_soliton_symmetric(P.with_(potential=P.potential.zero()))
    # outside the arctanh range: a positive bump with the right decay
    return GraphFunction.from_callable(
        P.grid, lambda x: soliton_profile(x, P.omega, P.p, 0.0))


def solve_ground_state(P: ModelParams, init: GraphFunction | None = None,
                       tol: float = 1e-10, max_iter: int = 5000,
                       newton_switch: float = 1e-3, omega0: float | None = None,
                       with_criterion: bool = True) -> GroundStateResult:
    """Nehari-constrained preconditioned descent for S_omega.

    Each iteration solves (K + omega M) g = grad S(v), tries v - tau g with
    tau = 1, 1/2, ... until the action decreases, takes the node-wise modulus
    and projects back onto the Nehari manifold.  Once the residual drops
    below ``newton_switch`` Newton steps on the stationary equation finish
    the job (quadratic convergence; the descent alone crawls near the
    solution).  Converged when the stationary residual is below ``tol``, or
    below the rounding floor ``residual_floor`` on very fine grids (the strong
    residual carries a factor 1/h^2).
    """
    H = P.hamiltonian
    if omega0 is None:
        omega0 = ground_eigenpair(H).omega0
    if P.omega <= omega0:
        raise FrequencyError(f"omega = {P.omega} must exceed omega_0 = {omega0:.6g}")
    mass = H.mass
    A = (H.stiffness + sp.diags(P.omega * mass)).tocsc()
    solve_a = spla.factorized(A)

    v = (init if init is not None else _initial_guess(P))
    v = abs(v).real if not v.is_real else abs(v)
    try:
        _, v = nehari_projection(v, P)
    except NehariError as exc:
        raise FrequencyError(str(exc)) from exc
    s_val = action(v, P)
    res = stationary_residual(v, P)
    it = 0
    newton = 0
    while res >= tol and it < max_iter:
        it += 1
        if res < newton_switch:
            step = _newton_step(v, P)
            if step is not None:
                new_res = stationary_residual(step, P)
                if new_res > 0.5 * res and newton > 0:
                    # rounding floor reached
                    break
                v, res = step, new_res
                newton += 1
                continue
        g = solve_a(_gradient(v.values, P))
        tau = 1.0
        while True:
            trial = abs(GraphFunction(P.grid, v.values - tau * g))
            _, trial = nehari_projection(trial, P)
            s_try = action(trial, P)
            if s_try <= s_val + 1e-14 * abs(s_val) or tau < 1e-6:
                break
            tau *= 0.5
        v, s_val = trial, s_try
        res = stationary_residual(v, P)
        if it % 100 == 0:
            log.debug("iter %d residual %.3e action %.12g tau %.3g", it, res, s_val, tau)
    if res >= max(tol, residual_floor(v, P)):
        raise ConvergenceError(f"ground state did not converge: residual {res:.3e} "
                               f"after {it} iterations", last_value=res, iterations=it)
    crit = instability_criterion(v, P).direct if with_criterion else float("nan")
    return GroundStateResult(profile=v, omega=P.omega, residual=res,
                             action_value=action(v, P), nehari_value=nehari(v, P),
                             pohozaev_value=pohozaev(v, P) if P.potential.has_xvprime
                             else float("nan"),
                             criterion=crit, iterations=it, newton_steps=newton,
                             omega0=omega0)


def _newton_step(v: GraphFunction, P: ModelParams) -> GraphFunction | None:
    H = P.hamiltonian
    x = v.values
    jac = H.stiffness + sp.diags(H.mass * (P.omega - P.p * np.abs(x) ** (P.p - 1)))
    try:
        dx = spla.spsolve(jac.tocsc(), _gradient(x, P))
    except RuntimeError:
        return None
    new = x - dx
    if not np.all(np.isfinite(new)) or np.min(new) <= 0:
        return None
    return GraphFunction(P.grid, new)


@dataclass
class CriterionReport:
    direct: float
    reduced: float
    finite_difference: float
    pohozaev: float

    @property
    def max_discrepancy(self) -> float:
        vals = (self.direct, self.reduced, self.finite_difference)
        return max(abs(a - b) for a in vals for b in vals)


def _power_law_exponent(P: ModelParams) -> float:
    kind = P.potential.kind
    if kind == INVERSE_POWER:
        return P.potential.alpha
    if kind == ZERO:
        return 0.0
    raise ValueError(f"criterion needs a zero or inverse-power potential, got {kind}")


def scaled_energy_second_derivative(u: GraphFunction, P: ModelParams, dlam: float = 1e-2) -> float:
    """Fourth-order centered difference of lam -> E(u^lam) at lam = 1."""
    e = {k: energy(scale(u, 1.0 + k * dlam), P) for k in (-2, -1, 0, 1, 2)}
    return (-e[2] + 16 * e[1] - 30 * e[0] + 16 * e[-1] - e[-2]) / (12 * dlam ** 2)


def instability_criterion(phi: GraphFunction, P: ModelParams,
                          dlam: float = 1e-2) -> CriterionReport:
    """d^2/dlam^2 E(phi^lam) at lam = 1, three ways.

    ``direct`` uses ||v'||^2 + a(a-1)/2 (Vv,v) - (p-1)(p-3)/(4(p+1)) ||v||^{p+1};
    ``reduced`` eliminates ||v'||^2 with P(v) = 0; the two differ by exactly
    P(phi).  ``finite_difference`` resamples phi^lam on the grid.
    """
    a = _power_law_exponent(P)
    p = P.p
    kin = kinetic(phi)
    vv = potential_energy(phi, P.potential)
    nl = lp_power(phi, p + 1)
    v0 = abs(phi.vertex_value) ** 2
    direct = kin + 0.5 * a * (a - 1) * vv - (p - 1) * (p - 3) / (4 * (p + 1)) * nl
    reduced = (-0.5 * a * (2 - a) * vv + 0.5 * P.gamma * v0
               - (p - 1) * (p - 5) / (4 * (p + 1)) * nl)
    fd = scaled_energy_second_derivative(phi, P, dlam)
    return CriterionReport(direct, reduced, fd, pohozaev(phi, P))


def criterion_ratio(phi: GraphFunction, P: ModelParams) -> float:
    """Left side of the instability inequality:
    (-a(2-a)(V phi, phi) + gamma |phi(0)|^2) / ||phi||_{p+1}^{p+1}."""
    a = _power_law_exponent(P)
    vv = potential_energy(phi, P.potential)
    return ((-a * (2 - a) * vv + P.gamma * abs(phi.vertex_value) ** 2)
            / lp_power(phi, P.p + 1))


def criterion_threshold(p: float) -> float:
    """Right side (p-1)(p-5)/(2(p+1)); the criterion is negative iff ratio < this."""
    return (p - 1) * (p - 5) / (2 * (p + 1))


@dataclass
class OmegaScan:
    omegas: list
    ratios: list
    criteria: list
    crossings: list = field(default_factory=list)
    omega_star: float | None = None

    def table(self):
        return list(zip(self.omegas, self.ratios, self.criteria))


def find_omega_star(P_template: ModelParams, omega_range, n_scan: int = 8,
                    tol: float = 1e-3, solver_tol: float = 1e-10,
                    workers: int = 1) -> OmegaScan:
    """Log-spaced omega scan of ratio - threshold, then bisection on each
    sign change.  ``omega_star`` is the first crossing (None if none)."""
    if not P_template.p > 5:
        raise ValueError("omega* only exists for supercritical p > 5")
    if P_template.potential.kind != INVERSE_POWER:
        raise ValueError("omega* scan needs an inverse-power potential")
    thr = criterion_threshold(P_template.p)
    omega0 = ground_eigenpair(P_template.hamiltonian).omega0
    lo, hi = omega_range
    lo = max(lo, omega0 * (1 + 1e-6))
    omegas = list(np.geomspace(lo, hi, n_scan))

    def evaluate(w):
        P = P_template.with_(omega=float(w))
        gs = solve_ground_state(P, tol=solver_tol, omega0=omega0, with_criterion=False)
        return criterion_ratio(gs.profile, P) - thr, gs

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(evaluate, omegas))
    else:
        results = [evaluate(w) for w in omegas]
    diffs = [r[0] for r in results]
    crits = [instability_criterion(r[1].profile, P_template.with_(omega=float(w))).direct
             for w, r in zip(omegas, results)]
    scan = OmegaScan(omegas=[float(w) for w in omegas], ratios=[d + thr for d in diffs],
                     criteria=crits)
    for i in range(len(omegas) - 1):
        if np.sign(diffs[i]) != np.sign(diffs[i + 1]):
            a, b = omegas[i], omegas[i + 1]
            fa = diffs[i]
            while b - a > tol * a:
                m = np.sqrt(a * b)
                fm, gs = evaluate(m)
                if np.sign(fm) == np.sign(fa):
                    a, fa = m, fm
                else:
                    b = m
            scan.crossings.append(float(np.sqrt(a * b)))
    if scan.crossings:
        scan.omega_star = scan.crossings[0]
    return scan


@dataclass
class RescaledReport:
    nl_power: float
    h1_norm2: float
    I0: float
    Iomega: float

    @property
    def h1_minus_nl(self) -> float:
        return self.h1_norm2 - self.nl_power


def rescale_profile(phi: GraphFunction, omega: float, p: float) -> GraphFunction:
    """phi~(y) = omega^{-1/(p-1)} phi(y / sqrt(omega)).

    Node x_j maps to y_j = sqrt(omega) x_j, so the result lives exactly on a
    grid stretched by sqrt(omega): no interpolation is involved.
    """
    g = phi.grid
    stretched = GraphGrid(g.n_edges, g.edge_length * np.sqrt(omega), g.cells_per_edge,
                          symmetric=g.symmetric)
    return GraphFunction(stretched, phi.values * omega ** (-1.0 / (p - 1)))


def rescaled_diagnostics(result: GroundStateResult, P: ModelParams) -> RescaledReport:
    """Norms of the rescaled ground state and the rescaled Nehari functionals

    I~_0(v) = ||v'||^2 + ||v||^2 - ||v||^{p+1}, and I~_omega, which adds the
    potential with strength beta omega^{-(2-alpha)/2} and the vertex term
    with strength gamma omega^{-1/2}.
    """
    p = P.p
    w = P.omega
    phit = rescale_profile(result.profile, w, p)
    kin = kinetic(phit)
    l2 = charge(phit)
    nl = lp_power(phit, p + 1)
    pot = P.potential
    if pot.kind == INVERSE_POWER:
        pot = Potential.inverse_power(pot.beta * w ** (-(2 - pot.alpha) / 2), pot.alpha)
    elif pot.kind != ZERO:
        raise ValueError("rescaled diagnostics need a zero or inverse-power potential")
    I0 = kin + l2 - nl
    Iw = (kin + l2 + potential_energy(phit, pot)
          - w ** -0.5 * P.gamma * abs(phit.vertex_value) ** 2 - nl)
    return RescaledReport(nl_power=nl, h1_norm2=kin + l2, I0=I0, Iomega=Iw)
