"""Crank-Nicolson time integration of the graph NLS with conservation,
virial and orbital-tube monitors.

Semi-discrete system (K the stiffness, M the lumped mass)::

    i M u_t = K u - M |u|^{p-1} u

``crank-nicolson-fixedpoint`` evaluates the nonlinearity with the
energy-conserving midpoint quotient

    G = (F(|u1|^2) - F(|u0|^2)) / (|u1|^2 - |u0|^2),   F(s) = 2 s^{(p+1)/2} / (p+1)

times (u1 + u0)/2, solved by fixed-point iteration; it conserves the
discrete charge and energy up to the iteration tolerance.
``crank-nicolson-relaxation`` uses the linearly implicit relaxation variable
phi^{n+1/2} = 2 |u^n|^{p-1} - phi^{n-1/2} (charge-conserving only).
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .functionals import (ModelParams, charge, energy, orbital_distance,
                          pohozaev, scale)
from .grid import GraphFunction, momentum_form, norm_h1, x_weighted_norm2

log = logging.getLogger(__name__)

FIXEDPOINT = "crank-nicolson-fixedpoint"
RELAXATION = "crank-nicolson-relaxation"
MONITOR_FIELDS = ("t", "E", "Q", "f", "fprime", "P", "dist", "theta")


class FixedPointError(RuntimeError):
    def __init__(self, msg, trajectory=None):
        super().__init__(msg)
        self.trajectory = trajectory


class BlowUpError(RuntimeError):
    def __init__(self, msg, trajectory=None):
        super().__init__(msg)
        self.trajectory = trajectory


@dataclass
class EvolutionConfig:
    dt: float
    t_final: float
    scheme: str = FIXEDPOINT
    fixedpoint_tol: float = 1e-12
    fixedpoint_max_iter: int = 50
    monitor_stride: int = 1
    snapshot_stride: int = 0
    allow_large_dt: bool = False
    blowup_factor: float = 1e6
    nonlinear_coefficient: float = 1.0  # test hook: 0 gives the linear flow

    def validate(self, h: float) -> None:
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.t_final < 0:
            raise ValueError("t_final must be non-negative")
        if self.scheme not in (FIXEDPOINT, RELAXATION):
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.dt > h and not self.allow_large_dt:
            raise ValueError(f"dt = {self.dt} exceeds h = {h}; set allow_large_dt to override")
        if self.monitor_stride < 1:
            raise ValueError("monitor_stride must be >= 1")

    @property
    def n_steps(self) -> int:
        return int(round(self.t_final / self.dt))


@dataclass
class Trajectory:
    times: list = field(default_factory=list)
    E: list = field(default_factory=list)
    Q: list = field(default_factory=list)
    f: list = field(default_factory=list)
    fprime: list = field(default_factory=list)
    P: list = field(default_factory=list)
    dist: list = field(default_factory=list)
    theta: list = field(default_factory=list)
    snapshots: list = field(default_factory=list)
    snapshot_times: list = field(default_factory=list)
    status: str = "completed"
    final_state: GraphFunction | None = None
    dt: float = float("nan")
    stride: int = 1

    def append(self, row: dict) -> None:
        self.times.append(row["t"])
        for key in MONITOR_FIELDS[1:]:
            getattr(self, key).append(row[key])

    def rows(self):
        for i in range(len(self.times)):
            yield {k: (self.times[i] if k == "t" else getattr(self, k)[i]) for k in MONITOR_FIELDS}

    def as_array(self, key: str) -> np.ndarray:
        return np.asarray(self.times if key == "t" else getattr(self, key), dtype=float)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(MONITOR_FIELDS)
            for row in self.rows():
                w.writerow([repr(float(row[k])) for k in MONITOR_FIELDS])


def monitors(u: GraphFunction, P: ModelParams, t: float,
             reference: GraphFunction | None) -> dict:
    if reference is not None:
        theta, dist = orbital_distance(u, reference)
    else:
        theta, dist = float("nan"), float("nan")
    return {"t": t, "E": energy(u, P), "Q": charge(u), "f": x_weighted_norm2(u),
            "fprime": 4.0 * momentum_form(u),
            "P": pohozaev(u, P) if P.potential.has_xvprime else float("nan"),
            "dist": dist, "theta": theta}


def _dfp_quotient(s1: np.ndarray, s0: np.ndarray, p: float) -> np.ndarray:
    """(F(s1) - F(s0)) / (s1 - s0) with F(s) = 2 s^{(p+1)/2} / (p+1)."""
    q = 0.5 * (p + 1)
    diff = s1 - s0
    mean = 0.5 * (s1 + s0)
    out = np.zeros_like(s1)
    close = (np.abs(diff) <= 1e-6 * mean) & (mean > 0)
    # Taylor expansion around the mean where the quotient cancels
    sm = mean[close]
    out[close] = sm ** (q - 1) * (1 + (q - 1) * (q - 2) * (diff[close] / sm) ** 2 / 24)
    far = ~close & (diff != 0)
    out[far] = (s1[far] ** q - s0[far] ** q) / (q * diff[far])
    return out


def evolve(u0: GraphFunction, P: ModelParams, cfg: EvolutionConfig,
           reference: GraphFunction | None = None,
           stop_when: Callable[[dict], bool] | None = None) -> Trajectory:
    """Integrate from u0 over [0, t_final]; monitors every ``monitor_stride`` steps.

    Raises FixedPointError (suggests a smaller dt) or BlowUpError when the
    H^1 norm exceeds ``blowup_factor`` times its initial value; both carry
    the partial trajectory.  ``stop_when(row)`` ends the run early.
    """
    g = P.grid
    cfg.validate(g.spacing)
    H = P.hamiltonian
    K = H.stiffness.astype(complex)
    mass = H.mass
    dt = cfg.dt
    kappa = cfg.nonlinear_coefficient
    p = P.p
    lhs = (sp.diags(1j * mass) - 0.5 * dt * K).tocsc()
    rhs_op = (sp.diags(1j * mass) + 0.5 * dt * K).tocsr()
    solve = spla.factorized(lhs) if cfg.scheme == FIXEDPOINT else None

    u = np.asarray(u0.values, dtype=complex)
    traj = Trajectory(dt=dt, stride=cfg.monitor_stride)
    h1_0 = max(norm_h1(u0), 1e-300)
    row = monitors(GraphFunction(g, u), P, 0.0, reference)
    traj.append(row)
    if cfg.snapshot_stride:
        traj.snapshots.append(u.copy())
        traj.snapshot_times.append(0.0)
    relax = np.abs(u) ** (p - 1) if cfg.scheme == RELAXATION else None
    for n in range(1, cfg.n_steps + 1):
        b = rhs_op @ u
        if cfg.scheme == FIXEDPOINT:
            s0 = np.abs(u) ** 2
            new = u.copy()
            for _ in range(cfg.fixedpoint_max_iter):
                with np.errstate(over="ignore", invalid="ignore"):
                    G = kappa * _dfp_quotient(np.abs(new) ** 2, s0, p)
                nxt = solve(b - 0.5 * dt * mass * G * (new + u))
                delta = np.max(np.abs(nxt - new))
                new = nxt
                if not np.isfinite(delta):
                    delta = np.inf
                    break
                if delta <= cfg.fixedpoint_tol * max(1.0, np.max(np.abs(new))):
                    break
            if not delta <= cfg.fixedpoint_tol * max(1.0, np.max(np.abs(new))):
                traj.status = "fixedpoint-failure"
                traj.final_state = GraphFunction(g, u)
                raise FixedPointError(
                    f"fixed point did not converge at t = {n * dt:.6g} (last update {delta:.3e});"
                    " try a smaller dt", trajectory=traj)
        else:
            if n > 1:
                relax = 2.0 * np.abs(u) ** (p - 1) - relax
            mat = (lhs + sp.diags(0.5 * dt * kappa * mass * relax)).tocsc()
            new = spla.spsolve(mat, b - 0.5 * dt * kappa * mass * relax * u)
        u = new
        t = n * dt
        if not np.all(np.isfinite(u)) or norm_h1(GraphFunction(g, u)) > cfg.blowup_factor * h1_0:
            traj.status = "blowup"
            traj.final_state = GraphFunction(g, u)
            raise BlowUpError(f"H1 norm exceeded {cfg.blowup_factor:g} x initial at t = {t:.6g}",
                              trajectory=traj)
        if n % cfg.monitor_stride == 0:
            row = monitors(GraphFunction(g, u), P, t, reference)
            traj.append(row)
            if stop_when is not None and stop_when(row):
                traj.status = "stopped"
                break
        if cfg.snapshot_stride and n % cfg.snapshot_stride == 0:
            traj.snapshots.append(u.copy())
            traj.snapshot_times.append(t)
    traj.final_state = GraphFunction(g, u)
    return traj


@dataclass
class VirialReport:
    max_mismatch_fprime: float
    max_mismatch_f: float
    max_abs_8P: float
    max_abs_f2: float
    n_samples: int


def virial_check(traj: Trajectory) -> VirialReport:
    """Compare centered differences of f' and second differences of f with 8P."""
    t = traj.as_array("t")
    if t.size < 3:
        raise ValueError("virial check needs at least 3 samples")
    dts = np.diff(t)
    if not np.allclose(dts, dts[0], rtol=1e-9, atol=1e-12):
        raise ValueError("virial check needs uniformly spaced samples")
    step = dts[0]
    f = traj.as_array("f")
    fp = traj.as_array("fprime")
    P8 = 8.0 * traj.as_array("P")[1:-1]
    d_fp = (fp[2:] - fp[:-2]) / (2 * step)
    d2_f = (f[2:] - 2 * f[1:-1] + f[:-2]) / step ** 2
    return VirialReport(max_mismatch_fprime=float(np.max(np.abs(d_fp - P8))),
                        max_mismatch_f=float(np.max(np.abs(d2_f - P8))),
                        max_abs_8P=float(np.max(np.abs(P8))),
                        max_abs_f2=float(np.max(np.abs(d2_f))),
                        n_samples=int(t.size))


def smooth_cutoff(r: np.ndarray) -> np.ndarray:
    """1 on [0, 1], 0 on [2, inf), quintic smoothstep (C^2) in between."""
    r = np.asarray(r, dtype=float)
    t = np.clip(r - 1.0, 0.0, 1.0)
    return 1.0 - t ** 3 * (10.0 - 15.0 * t + 6.0 * t * t)


def apply_cutoff(u: GraphFunction, a: float) -> GraphFunction:
    """Multiply every edge by chi(x / a)."""
    if not a > 0:
        raise ValueError("cutoff radius must be positive")
    if np.isinf(a):
        return u
    chi = smooth_cutoff(u.grid.x / a)
    nod = u.nodal() * chi
    return GraphFunction.from_nodal(u.grid, nod)


@dataclass
class InstabilityOutcome:
    outcome: str  # "exit", "no-exit", "blowup" or "breakdown"
    entry: dict
    exit_time: float | None
    min_neg_P: float
    max_neg_P: float
    f_concave: bool
    initial_distance: float
    tube_radius: float
    relative_tube: bool
    trajectory: Trajectory

    @property
    def entry_ok(self) -> bool:
        return all(self.entry.values())


class EntryConditionError(ValueError):
    def __init__(self, msg, entry):
        super().__init__(msg)
        self.entry = entry


def random_perturbation(grid, amplitude: float, seed: int, n_modes: int = 8) -> GraphFunction:
    """Complex combination of sin(k pi x / L) per edge, zero at the vertex,
    normalized to ``amplitude`` in H^1."""
    rng = np.random.default_rng(seed)
    k = np.arange(1, n_modes + 1)
    basis = np.sin(np.pi * np.outer(k, grid.x) / grid.edge_length) / k[:, None]
    nod = np.empty((grid.n_stored, grid.x.size), dtype=complex)
    for e in range(grid.n_stored):
        c = rng.standard_normal(n_modes) + 1j * rng.standard_normal(n_modes)
        nod[e] = c @ basis
    w = GraphFunction.from_nodal(grid, nod)
    return w * (amplitude / norm_h1(w))


def instability_experiment(gs, P: ModelParams, lambda1: float, a: float,
                           eps_tube: float, cfg: EvolutionConfig,
                           relative_tube: bool = True, require_entry: bool = True,
                           stop_at_exit: bool = True, perturbation: str = "scaling",
                           noise_amplitude: float = 1e-3,
                           seed: int | None = None) -> InstabilityOutcome:
    """Perturb the ground state along the scaling direction, cut off, evolve,
    and watch the orbital tube.

    With ``relative_tube`` the tube radius is eps_tube * ||phi||_{H^1} (see
    README); otherwise the absolute H^1 distance is used.  ``perturbation="noise"``
    adds a seeded random perturbation of H^1 size ``noise_amplitude`` on top of
    the scaled and cut-off profile.
    """
    if not lambda1 > 0:
        raise ValueError("lambda1 must be positive")
    phi = gs.profile
    u0 = apply_cutoff(scale(phi, lambda1), a)
    if perturbation == "noise":
        if seed is None:
            raise ValueError("noise perturbation needs a seed")
        u0 = u0 + random_perturbation(P.grid, noise_amplitude, seed)
    elif perturbation != "scaling":
        raise ValueError(f"unknown perturbation {perturbation!r}")
    e_phi, e_u = energy(phi, P), energy(u0, P)
    q_phi, q_u = charge(phi), charge(u0)
    p_u = pohozaev(u0, P)
    entry = {"energy_below": bool(e_u < e_phi), "charge_not_above": bool(q_u <= q_phi),
             "pohozaev_negative": bool(p_u < 0)}
    if require_entry and not all(entry.values()):
        failed = [k for k, v in entry.items() if not v]
        raise EntryConditionError(f"entry conditions failed: {failed}", entry)
    radius = eps_tube * (norm_h1(phi) if relative_tube else 1.0)
    _, d0 = orbital_distance(u0, phi)

    def exited(row):
        return stop_at_exit and row["dist"] > radius

    status = "completed"
    try:
        traj = evolve(u0, P, cfg, reference=phi, stop_when=exited)
    except BlowUpError as exc:
        traj, status = exc.trajectory, "blowup"
    except FixedPointError as exc:
        # the iteration breaks down only once the solution is concentrating
        traj, status = exc.trajectory, "breakdown"
    dist = traj.as_array("dist")
    t = traj.as_array("t")
    Pv = traj.as_array("P")
    out_idx = np.nonzero(dist > radius)[0]
    exit_time = float(t[out_idx[0]]) if out_idx.size else None
    upto = out_idx[0] if out_idx.size else len(t)
    before = Pv[:max(upto, 1)]
    f = traj.as_array("f")[:max(upto, 1)]
    concave = bool(np.all(np.diff(f, 2) <= 1e-12 * max(1.0, np.max(np.abs(f))))) if f.size > 2 else True
    if exit_time is not None:
        outcome = "exit"
    elif status in ("blowup", "breakdown"):
        outcome = status
    else:
        outcome = "no-exit"
    return InstabilityOutcome(outcome=outcome, entry=entry, exit_time=exit_time,
                              min_neg_P=float(np.min(-before)), max_neg_P=float(np.max(-before)),
                              f_concave=concave, initial_distance=d0, tube_radius=radius,
                              relative_tube=relative_tube, trajectory=traj)
